//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature (default) [`Exploration::Parallel`] runs on
//! the rayon pool; without it every strategy runs sequentially. Results are
//! returned in input order either way, so callers stay deterministic.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exploration {
    Sequential,
    #[default]
    Parallel,
}

impl Exploration {
    /// Whether this strategy actually runs in parallel in this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exploration::Parallel
    }
}

/// Below this many items the rayon overhead dominates.
const MIN_PARALLEL_BATCH: usize = 64;

pub fn map<T, U, F>(strategy: Exploration, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if strategy.is_parallel() && items.len() >= MIN_PARALLEL_BATCH {
        return items.par_iter().map(f).collect();
    }
    let _ = strategy;
    items.iter().map(f).collect()
}
