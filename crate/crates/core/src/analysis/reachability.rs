use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::par::{self, Exploration};
use crate::petri::{Marking, Net};

/// Token counts per storage slot. Payloads and timestamps are abstracted
/// away; fusion aliases share one entry.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AbstractMarking(pub Vec<u32>);

impl AbstractMarking {
    pub fn of(net: &Net, marking: &Marking) -> Self {
        let counts = marking.slot_counts();
        debug_assert_eq!(counts.len(), net.storage_len());
        AbstractMarking(counts)
    }

    pub fn initial(net: &Net) -> Self {
        Self::of(net, &Marking::initial(net))
    }

    /// Counts given by place id. Counts given for several aliases of one
    /// group add up.
    pub fn from_counts(net: &Net, counts: &BTreeMap<String, u32>) -> Option<Self> {
        let mut v = vec![0u32; net.storage_len()];
        for (place, n) in counts {
            v[net.storage_of(net.place_index(place)?)] += n;
        }
        Some(AbstractMarking(v))
    }

    pub fn max_count(&self) -> u32 {
        self.0.iter().copied().max().unwrap_or(0)
    }

    /// Non-zero counts keyed by canonical place id.
    pub fn named(&self, net: &Net) -> BTreeMap<String, u32> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(slot, &c)| (net.storage_name(slot).to_owned(), c))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "bound", content = "value")]
pub enum Truncation {
    /// Some explored marking held more than `k` tokens in one place.
    PlaceBound(u32),
    /// The node budget `m` was exhausted.
    NodeBound(usize),
}

impl fmt::Display for Truncation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Truncation::PlaceBound(k) => write!(f, "place bound k={k} exceeded"),
            Truncation::NodeBound(m) => write!(f, "node bound m={m} reached"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub from: usize,
    pub transition: usize,
    pub to: usize,
}

/// Explored part of the count-abstracted state space. Nodes are numbered in
/// breadth-first discovery order; successors are discovered in transition
/// declaration order, so the numbering is canonical.
#[derive(Debug, Clone)]
pub struct ReachabilityGraph {
    pub nodes: Vec<AbstractMarking>,
    /// False for nodes that were not expanded (over the place bound, or
    /// never reached before the node budget ran out).
    pub expanded: Vec<bool>,
    pub edges: Vec<Edge>,
    pub initial: usize,
    pub truncated: Option<Truncation>,
    pub transition_ids: Vec<String>,
    pub slot_names: Vec<String>,
}

impl ReachabilityGraph {
    pub fn is_truncated(&self) -> bool {
        self.truncated.is_some()
    }

    pub fn node_of(&self, marking: &AbstractMarking) -> Option<usize> {
        self.nodes.iter().position(|n| n == marking)
    }

    pub fn outgoing(&self, node: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.from == node)
    }

    /// Successor of `node` under `transition`, if the edge was explored.
    /// Abstract firing is deterministic, so there is at most one.
    pub fn successor(&self, node: usize, transition: &str) -> Option<usize> {
        let t = self.transition_ids.iter().position(|id| id == transition)?;
        self.edges
            .iter()
            .find(|e| e.from == node && e.transition == t)
            .map(|e| e.to)
    }

    /// Walks `transitions` from the initial node; true if every step is an
    /// explored edge.
    pub fn accepts_path<'a>(&self, transitions: impl IntoIterator<Item = &'a str>) -> bool {
        let mut at = self.initial;
        for t in transitions {
            match self.successor(at, t) {
                Some(next) => at = next,
                None => return false,
            }
        }
        true
    }

    pub fn to_json(&self) -> serde_json::Value {
        let named = |m: &AbstractMarking| -> BTreeMap<&str, u32> {
            m.0.iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(s, &c)| (self.slot_names[s].as_str(), c))
                .collect()
        };
        serde_json::json!({
            "initial": self.initial,
            "nodes": self.nodes.iter().map(named).collect::<Vec<_>>(),
            "edges": self.edges.iter()
                .map(|e| serde_json::json!([e.from, self.transition_ids[e.transition], e.to]))
                .collect::<Vec<_>>(),
            "truncated": self.truncated,
        })
    }

    /// Graphviz rendering, one node per marking.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph reachability {\n  node [shape=box, fontsize=10];\n");
        for (i, m) in self.nodes.iter().enumerate() {
            let label: Vec<String> = m
                .0
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(s, &c)| {
                    if c == 1 {
                        self.slot_names[s].clone()
                    } else {
                        format!("{}x{}", c, self.slot_names[s])
                    }
                })
                .collect();
            let style = if i == self.initial { ", style=bold" } else { "" };
            out.push_str(&format!(
                "  n{i} [label=\"{}\"{style}];\n",
                label.join("\\n").replace('"', "'")
            ));
        }
        for e in &self.edges {
            out.push_str(&format!(
                "  n{} -> n{} [label=\"{}\"];\n",
                e.from, e.to, self.transition_ids[e.transition]
            ));
        }
        out.push_str("}\n");
        out
    }
}

/// Per-transition count effect, aggregated by storage slot.
struct Effect {
    pre: Vec<(usize, u32)>,
    post: Vec<(usize, u32)>,
}

fn effects(net: &Net) -> Vec<Effect> {
    let add = |v: &mut Vec<(usize, u32)>, slot: usize, w: u32| match v
        .iter_mut()
        .find(|(s, _)| *s == slot)
    {
        Some((_, n)) => *n += w,
        None => v.push((slot, w)),
    };
    net.transitions()
        .iter()
        .map(|t| {
            let mut pre = Vec::new();
            let mut post = Vec::new();
            for (a, &p) in t.inputs.iter().zip(t.input_places()) {
                add(&mut pre, net.storage_of(p), a.weight);
            }
            for (a, &p) in t.outputs.iter().zip(t.output_places()) {
                add(&mut post, net.storage_of(p), a.weight);
            }
            Effect { pre, post }
        })
        .collect()
}

fn successors(net: &Net, effects: &[Effect], m: &AbstractMarking) -> Vec<(usize, AbstractMarking)> {
    let mut out = Vec::new();
    for (t, eff) in effects.iter().enumerate() {
        if eff.pre.iter().any(|&(s, w)| m.0[s] < w) {
            continue;
        }
        let mut next = m.0.clone();
        for &(s, w) in &eff.pre {
            next[s] -= w;
        }
        for &(s, w) in &eff.post {
            next[s] += w;
        }
        // The concrete engine refuses firings that overflow a capacity.
        if eff
            .post
            .iter()
            .any(|&(s, _)| net.storage_capacity(s).is_some_and(|cap| next[s] > cap))
        {
            continue;
        }
        out.push((t, AbstractMarking(next)));
    }
    out
}

/// Breadth-first exploration of the count abstraction. A transition is
/// abstract-enabled when every input store holds at least the arc weights
/// and no capacity would overflow; guards are assumed satisfiable, so the
/// graph over-approximates the concrete behavior.
///
/// Markings holding more than `k` tokens in one store are recorded but not
/// expanded; at most `m` nodes are created. Either bound marks the graph
/// truncated.
pub fn reachability(net: &Net, initial: &AbstractMarking, k: u32, m: usize) -> ReachabilityGraph {
    reachability_with(net, initial, k, m, Exploration::default())
}

pub fn reachability_with(
    net: &Net,
    initial: &AbstractMarking,
    k: u32,
    m: usize,
    strategy: Exploration,
) -> ReachabilityGraph {
    assert!(k >= 1 && m >= 1, "bounds must be positive");
    let effects = effects(net);
    let mut nodes = vec![initial.clone()];
    let mut expanded = vec![false];
    let mut index: HashMap<AbstractMarking, usize> = HashMap::from([(initial.clone(), 0)]);
    let mut edges = Vec::new();
    let mut truncated = None;
    let mut frontier = vec![0usize];

    while !frontier.is_empty() {
        let batch: Vec<&AbstractMarking> = frontier.iter().map(|&i| &nodes[i]).collect();
        let expansions = par::map(strategy, &batch, |marking| {
            (marking.max_count() <= k).then(|| successors(net, &effects, marking))
        });
        let mut next_frontier = Vec::new();
        for (&node, succ) in frontier.iter().zip(expansions) {
            let Some(succ) = succ else {
                truncated.get_or_insert(Truncation::PlaceBound(k));
                continue;
            };
            expanded[node] = true;
            for (t, marking) in succ {
                let to = match index.get(&marking) {
                    Some(&i) => i,
                    None if nodes.len() >= m => {
                        truncated = Some(Truncation::NodeBound(m));
                        continue;
                    }
                    None => {
                        let i = nodes.len();
                        index.insert(marking.clone(), i);
                        nodes.push(marking);
                        expanded.push(false);
                        next_frontier.push(i);
                        i
                    }
                };
                edges.push(Edge {
                    from: node,
                    transition: t,
                    to,
                });
            }
        }
        frontier = next_frontier;
    }

    ReachabilityGraph {
        nodes,
        expanded,
        edges,
        initial: 0,
        truncated,
        transition_ids: net.transitions().iter().map(|t| t.id.clone()).collect(),
        slot_names: (0..net.storage_len())
            .map(|s| net.storage_name(s).to_owned())
            .collect(),
    }
}
