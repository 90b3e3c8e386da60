use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::AbstractMarking;
use crate::petri::Net;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cmp {
    Eq,
    Ge,
    Le,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Clause {
    places: Vec<String>,
    cmp: Cmp,
    value: u32,
}

/// Conjunction of linear count constraints over places, used to allowlist
/// intended terminal markings.
///
/// Syntax: `clause ('&' clause)*` where a clause is
/// `place ('+' place)* ('=' | '>=' | '<=') integer`, e.g.
/// `done.a+failed.a=1 & done.b+failed.b=1`. A place named by several
/// aliases counts once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TerminalPredicate {
    clauses: Vec<Clause>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PredicateError {
    #[error("malformed clause `{0}`")]
    Malformed(String),
    #[error("unknown place `{0}`")]
    UnknownPlace(String),
}

impl TerminalPredicate {
    /// Predicate with `sum(places) = value` clauses.
    pub fn sums_equal<I, S>(groups: I) -> Self
    where
        I: IntoIterator<Item = (Vec<S>, u32)>,
        S: Into<String>,
    {
        TerminalPredicate {
            clauses: groups
                .into_iter()
                .map(|(places, value)| Clause {
                    places: places.into_iter().map(Into::into).collect(),
                    cmp: Cmp::Eq,
                    value,
                })
                .collect(),
        }
    }

    /// Checks every referenced place against `net`.
    pub fn validate(&self, net: &Net) -> Result<(), PredicateError> {
        for c in &self.clauses {
            for p in &c.places {
                if net.place_index(p).is_none() {
                    return Err(PredicateError::UnknownPlace(p.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn matches(&self, net: &Net, marking: &AbstractMarking) -> bool {
        self.clauses.iter().all(|c| {
            let mut slots: Vec<usize> = c
                .places
                .iter()
                .filter_map(|p| net.place_index(p).map(|i| net.storage_of(i)))
                .collect();
            slots.sort_unstable();
            slots.dedup();
            let sum: u32 = slots.iter().map(|&s| marking.0[s]).sum();
            match c.cmp {
                Cmp::Eq => sum == c.value,
                Cmp::Ge => sum >= c.value,
                Cmp::Le => sum <= c.value,
            }
        })
    }
}

impl FromStr for TerminalPredicate {
    type Err = PredicateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut clauses = Vec::new();
        for raw in s.split('&') {
            let text = raw.trim();
            let (lhs, cmp, rhs) = if let Some((l, r)) = text.split_once(">=") {
                (l, Cmp::Ge, r)
            } else if let Some((l, r)) = text.split_once("<=") {
                (l, Cmp::Le, r)
            } else if let Some((l, r)) = text.split_once('=') {
                (l, Cmp::Eq, r)
            } else {
                return Err(PredicateError::Malformed(text.to_owned()));
            };
            let value = rhs
                .trim()
                .parse()
                .map_err(|_| PredicateError::Malformed(text.to_owned()))?;
            let places: Vec<String> = lhs.split('+').map(|p| p.trim().to_owned()).collect();
            if places.iter().any(String::is_empty) {
                return Err(PredicateError::Malformed(text.to_owned()));
            }
            clauses.push(Clause { places, cmp, value });
        }
        Ok(TerminalPredicate { clauses })
    }
}

impl fmt::Display for TerminalPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.clauses.iter().enumerate() {
            if i > 0 {
                f.write_str(" & ")?;
            }
            let op = match c.cmp {
                Cmp::Eq => "=",
                Cmp::Ge => ">=",
                Cmp::Le => "<=",
            };
            write!(f, "{}{op}{}", c.places.join("+"), c.value)?;
        }
        Ok(())
    }
}
