//! Bounded state-space analysis over the count abstraction of a net.
//!
//! The abstraction drops payloads and time (delays count as zero) and treats
//! every guard as satisfiable. It may therefore report markings the concrete
//! engine never reaches, but every concrete firing sequence is a path in the
//! untruncated graph. Liveness here means quasi-liveness: each transition
//! fires in at least one reachable marking. Stronger notions (L2 to L4) are
//! not checked.

mod predicate;
mod reachability;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use predicate::{PredicateError, TerminalPredicate};
pub use reachability::{
    reachability, reachability_with, AbstractMarking, Edge, ReachabilityGraph, Truncation,
};

use crate::par::Exploration;
use crate::petri::Net;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeadlockReport {
    /// Node indices of the dead markings.
    pub nodes: Vec<usize>,
    /// Set when the graph is truncated: unexplored markings may hide more.
    pub partial: bool,
}

/// Expanded nodes without outgoing edges that no allowlist predicate
/// accepts.
pub fn deadlocks(
    g: &ReachabilityGraph,
    net: &Net,
    allowlist: &[TerminalPredicate],
) -> DeadlockReport {
    let mut has_out = vec![false; g.nodes.len()];
    for e in &g.edges {
        has_out[e.from] = true;
    }
    let nodes = (0..g.nodes.len())
        .filter(|&i| g.expanded[i] && !has_out[i])
        .filter(|&i| !allowlist.iter().any(|p| p.matches(net, &g.nodes[i])))
        .collect();
    DeadlockReport {
        nodes,
        partial: g.is_truncated(),
    }
}

/// Transitions that label no edge, in declaration order.
pub fn quasi_live(g: &ReachabilityGraph, net: &Net) -> Vec<String> {
    let mut seen = vec![false; net.transitions().len()];
    for e in &g.edges {
        seen[e.transition] = true;
    }
    net.transitions()
        .iter()
        .zip(seen)
        .filter(|(_, s)| !s)
        .map(|(t, _)| t.id.clone())
        .collect()
}

/// True iff the graph is complete and no explored marking has a store with
/// more than `k` tokens.
pub fn bounded(g: &ReachabilityGraph, k: u32) -> bool {
    !g.is_truncated() && g.nodes.iter().all(|n| n.max_count() <= k)
}

/// Machine-readable analysis summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub net_id: String,
    pub k: u32,
    pub m: usize,
    pub nodes: usize,
    pub edges: usize,
    pub deadlocks: Vec<BTreeMap<String, u32>>,
    pub deadlocks_partial: bool,
    pub non_quasi_live: Vec<String>,
    pub bounded: bool,
    pub max_tokens_per_place: u32,
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<Truncation>,
}

impl AnalysisReport {
    /// No deadlocks and every transition quasi-live.
    pub fn clean(&self) -> bool {
        self.deadlocks.is_empty() && self.non_quasi_live.is_empty()
    }
}

pub fn analyze(
    net: &Net,
    initial: &AbstractMarking,
    k: u32,
    m: usize,
    allowlist: &[TerminalPredicate],
) -> (ReachabilityGraph, AnalysisReport) {
    analyze_with(net, initial, k, m, allowlist, Exploration::default())
}

pub fn analyze_with(
    net: &Net,
    initial: &AbstractMarking,
    k: u32,
    m: usize,
    allowlist: &[TerminalPredicate],
    strategy: Exploration,
) -> (ReachabilityGraph, AnalysisReport) {
    let g = reachability_with(net, initial, k, m, strategy);
    let dead = deadlocks(&g, net, allowlist);
    let report = AnalysisReport {
        net_id: net.id().to_owned(),
        k,
        m,
        nodes: g.nodes.len(),
        edges: g.edges.len(),
        deadlocks: dead.nodes.iter().map(|&i| g.nodes[i].named(net)).collect(),
        deadlocks_partial: dead.partial,
        non_quasi_live: quasi_live(&g, net),
        bounded: bounded(&g, k),
        max_tokens_per_place: g.nodes.iter().map(AbstractMarking::max_count).max().unwrap_or(0),
        truncated: g.is_truncated(),
        truncation: g.truncated,
    };
    (g, report)
}
