//! Exhaustive reachability enumerator used as a test oracle.
//!
//! The oracle works on the raw `NetDefinition`: it derives fusion classes,
//! arc effects and capacities itself and explores with a plain worklist, so
//! it shares no code path with the library's breadth-first search.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use tuftwin_core::analysis::{AbstractMarking, ReachabilityGraph};
use tuftwin_core::petri::{Net, NetDefinition};

pub type Class = BTreeSet<String>;
pub type OracleMarking = BTreeMap<Class, u32>;

pub struct Oracle {
    classes: Vec<Class>,
    capacity: Vec<Option<u32>>,
    transitions: Vec<(String, Vec<u32>, Vec<u32>)>,
    initial: Vec<u32>,
}

impl Oracle {
    pub fn new(def: &NetDefinition) -> Self {
        let mut group_members: BTreeMap<String, Class> = BTreeMap::new();
        for p in &def.places {
            if let Some(g) = &p.fusion_group {
                group_members.entry(g.clone()).or_default().insert(p.id.clone());
            }
        }
        for (g, members) in &def.fusion_groups {
            group_members.entry(g.clone()).or_default().extend(members.iter().cloned());
        }
        let mut classes: Vec<Class> = group_members.into_values().collect();
        for p in &def.places {
            if !classes.iter().any(|c| c.contains(&p.id)) {
                classes.push(Class::from([p.id.clone()]));
            }
        }
        let class_of: BTreeMap<String, usize> = classes
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.iter().map(move |p| (p.clone(), i)))
            .collect();
        let mut capacity = vec![None; classes.len()];
        let mut initial = vec![0u32; classes.len()];
        for p in &def.places {
            let c = class_of[&p.id];
            if let Some(cap) = p.capacity {
                let cap = cap as u32;
                capacity[c] = Some(capacity[c].map_or(cap, |old: u32| old.min(cap)));
            }
            initial[c] += p.initial.len() as u32;
        }
        let transitions = def
            .transitions
            .iter()
            .map(|t| {
                let mut pre = vec![0u32; classes.len()];
                let mut post = vec![0u32; classes.len()];
                for a in &t.inputs {
                    pre[class_of[&a.place]] += a.weight as u32;
                }
                for a in &t.outputs {
                    post[class_of[&a.place]] += a.weight as u32;
                }
                (t.id.clone(), pre, post)
            })
            .collect();
        Oracle { classes, capacity, transitions, initial }
    }

    pub fn named(&self, v: &[u32]) -> OracleMarking {
        v.iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (self.classes[i].clone(), c))
            .collect()
    }

    /// Reachable markings and edges. Markings with more than `k` tokens in a
    /// class are recorded but not expanded.
    pub fn explore(&self, k: u32) -> (HashSet<OracleMarking>, HashSet<(OracleMarking, String, OracleMarking)>) {
        let mut seen: HashSet<Vec<u32>> = HashSet::new();
        let mut stack = vec![self.initial.clone()];
        let mut edges = HashSet::new();
        seen.insert(self.initial.clone());
        while let Some(m) = stack.pop() {
            if m.iter().any(|&c| c > k) {
                continue;
            }
            for (id, pre, post) in &self.transitions {
                if m.iter().zip(pre).any(|(have, need)| have < need) {
                    continue;
                }
                let next: Vec<u32> = m
                    .iter()
                    .zip(pre)
                    .zip(post)
                    .map(|((h, a), b)| h - a + b)
                    .collect();
                let overflow = next
                    .iter()
                    .zip(&self.capacity)
                    .zip(post)
                    .any(|((n, cap), b)| *b > 0 && cap.is_some_and(|c| *n > c));
                if overflow {
                    continue;
                }
                edges.insert((self.named(&m), id.clone(), self.named(&next)));
                if seen.insert(next.clone()) {
                    stack.push(next);
                }
            }
        }
        (seen.iter().map(|v| self.named(v)).collect(), edges)
    }
}

pub fn graph_sets(
    net: &Net,
    g: &ReachabilityGraph,
) -> (HashSet<OracleMarking>, HashSet<(OracleMarking, String, OracleMarking)>) {
    let name = |m: &AbstractMarking| -> OracleMarking {
        m.0.iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(slot, &c)| {
                let class: Class = net
                    .storage_members(slot)
                    .iter()
                    .map(|&p| net.places()[p].id.clone())
                    .collect();
                (class, c)
            })
            .collect()
    };
    let nodes = g.nodes.iter().map(name).collect();
    let edges = g
        .edges
        .iter()
        .map(|e| (name(&g.nodes[e.from]), g.transition_ids[e.transition].clone(), name(&g.nodes[e.to])))
        .collect();
    (nodes, edges)
}

pub fn random_arcs(rng: &mut ChaCha8Rng, n: usize, n_places: usize) -> Vec<serde_json::Value> {
    (0..n)
        .map(|_| json!({"place": format!("p{}", rng.random_range(0..n_places)),
                        "weight": rng.random_range(1..=2)}))
        .collect()
}

/// Random net: ≤6 places, ≤6 transitions, weights ≤2, ≤3 initial tokens.
pub fn random_definition(rng: &mut ChaCha8Rng, i: usize) -> NetDefinition {
    let n_places = rng.random_range(1..=6);
    let n_trans = rng.random_range(1..=6);
    let tokens = rng.random_range(0..=3);
    let mut initial = vec![0usize; n_places];
    for _ in 0..tokens {
        initial[rng.random_range(0..n_places)] += 1;
    }
    let mut fusion = serde_json::Map::new();
    let mut fused = Vec::new();
    if n_places >= 2 && rng.random_bool(0.3) {
        let a = rng.random_range(0..n_places);
        let b = (a + 1 + rng.random_range(0..n_places - 1)) % n_places;
        fusion.insert("g".into(), json!([format!("p{a}"), format!("p{b}")]));
        fused = vec![a, b];
    }
    let places: Vec<_> = (0..n_places)
        .map(|p| {
            let mut v = json!({"id": format!("p{p}"), "name": "p",
                "initial": vec![json!({}); initial[p]]});
            if !fused.contains(&p) && rng.random_bool(0.15) {
                v["capacity"] = json!(initial[p].max(1) as i64 + rng.random_range(0..2));
            }
            v
        })
        .collect();
    let transitions: Vec<_> = (0..n_trans)
        .map(|t| {
            let n_in = rng.random_range(0..=2);
            let n_out = if n_in == 0 { rng.random_range(1..=2) } else { rng.random_range(0..=2) };
            let inputs = random_arcs(rng, n_in, n_places);
            let outputs = random_arcs(rng, n_out, n_places);
            json!({"id": format!("t{t}"), "name": "t", "inputs": inputs, "outputs": outputs})
        })
        .collect();
    serde_json::from_value(json!({
        "net_id": format!("random-{i}"), "places": places, "transitions": transitions,
        "fusion_groups": fusion
    }))
    .unwrap()
}

