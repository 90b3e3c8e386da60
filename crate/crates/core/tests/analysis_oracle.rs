//! Reachability checked against a separately written exhaustive enumerator.

mod support;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use tuftwin_core::analysis::{
    bounded, deadlocks, quasi_live, reachability, reachability_with, AbstractMarking,
    TerminalPredicate,
};
use tuftwin_core::par::Exploration;
use tuftwin_core::petri::{build_net, enabled_transitions, fire_mut, Env, Marking, Net};

use support::oracle::{graph_sets, random_definition, Oracle};

#[test]
fn random_nets_match_the_enumerator() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut compared = 0;
    for i in 0..250 {
        let def = random_definition(&mut rng, i);
        let net = build_net(&def).unwrap();
        let g = reachability(&net, &AbstractMarking::initial(&net), 4, 1_000_000);
        assert!(!matches!(g.truncated, Some(tuftwin_core::analysis::Truncation::NodeBound(_))));
        let oracle = Oracle::new(&def);
        assert_eq!(graph_sets(&net, &g), oracle.explore(4), "net {i}: {def:?}");
        compared += 1;
    }
    assert_eq!(compared, 250);
}

#[test]
fn sequential_and_parallel_exploration_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..100 {
        let net = build_net(&random_definition(&mut rng, i)).unwrap();
        let init = AbstractMarking::initial(&net);
        let a = reachability_with(&net, &init, 8, 5000, Exploration::Sequential);
        let b = reachability_with(&net, &init, 8, 5000, Exploration::Parallel);
        assert_eq!(a.to_json().to_string(), b.to_json().to_string());
    }
}

fn net(v: serde_json::Value) -> Net {
    build_net(&serde_json::from_value(v).unwrap()).unwrap()
}

fn chain3() -> Net {
    net(json!({
        "net_id": "chain3",
        "places": [{"id": "a", "name": "a", "initial": [{}]}, {"id": "b", "name": "b"}, {"id": "c", "name": "c"}],
        "transitions": [
            {"id": "ab", "name": "ab", "inputs": [{"place": "a"}], "outputs": [{"place": "b"}]},
            {"id": "bc", "name": "bc", "inputs": [{"place": "b"}], "outputs": [{"place": "c"}]}
        ]
    }))
}

fn producer() -> Net {
    net(json!({
        "net_id": "producer",
        "places": [{"id": "s", "name": "s", "initial": [{}]}, {"id": "out", "name": "out"}],
        "transitions": [{"id": "emit", "name": "emit",
            "inputs": [{"place": "s"}], "outputs": [{"place": "s"}, {"place": "out"}]}]
    }))
}

#[test]
fn chain_graph_shape() {
    let n = chain3();
    let g = reachability(&n, &AbstractMarking::initial(&n), 5, 100);
    assert_eq!(g.nodes.len(), 3);
    assert_eq!(g.edges.len(), 2);
    assert!(!g.is_truncated());
    assert!(quasi_live(&g, &n).is_empty());
    assert!(bounded(&g, 1));
}

#[test]
fn producer_loop_truncates() {
    let n = producer();
    let g = reachability(&n, &AbstractMarking::initial(&n), 5, 1000);
    assert!(g.is_truncated());
    assert!(!bounded(&g, 5));
    let g = reachability(&n, &AbstractMarking::initial(&n), 1000, 10);
    assert_eq!(g.nodes.len(), 10);
    assert!(g.is_truncated());
}

#[test]
fn deadlock_allowlist() {
    let n = chain3();
    let g = reachability(&n, &AbstractMarking::initial(&n), 5, 100);
    let done: TerminalPredicate = "c=1".parse().unwrap();
    assert!(deadlocks(&g, &n, &[done]).nodes.is_empty());
    let report = deadlocks(&g, &n, &[]);
    assert_eq!(report.nodes.len(), 1);
    assert!(!report.partial);
    assert_eq!(g.nodes[report.nodes[0]].named(&n), BTreeMap::from([("c".to_string(), 1)]));
}

#[test]
fn never_marked_input_is_not_quasi_live() {
    let n = net(json!({
        "net_id": "dead",
        "places": [{"id": "a", "name": "a", "initial": [{}]}, {"id": "b", "name": "b"}, {"id": "never", "name": "n"}],
        "transitions": [
            {"id": "ok", "name": "ok", "inputs": [{"place": "a"}], "outputs": [{"place": "b"}]},
            {"id": "stuck", "name": "stuck", "inputs": [{"place": "never"}], "outputs": [{"place": "b"}]}
        ]
    }));
    let g = reachability(&n, &AbstractMarking::initial(&n), 5, 100);
    assert_eq!(quasi_live(&g, &n), ["stuck"]);
}

#[test]
fn capacity_one_status_places_are_one_bounded() {
    let n = net(json!({
        "net_id": "status",
        "places": [{"id": "idle", "name": "idle", "capacity": 1, "initial": [{}]},
                   {"id": "busy", "name": "busy", "capacity": 1}],
        "transitions": [
            {"id": "go", "name": "go", "inputs": [{"place": "idle"}], "outputs": [{"place": "busy"}]},
            {"id": "back", "name": "back", "inputs": [{"place": "busy"}], "outputs": [{"place": "idle"}]}
        ]
    }));
    let g = reachability(&n, &AbstractMarking::initial(&n), 1, 100);
    assert!(bounded(&g, 1));
    assert!(deadlocks(&g, &n, &[]).nodes.is_empty());
}

#[test]
fn identical_inputs_serialize_identically() {
    let n = producer();
    let a = reachability(&n, &AbstractMarking::initial(&n), 4, 100).to_json().to_string();
    for _ in 0..10 {
        assert_eq!(reachability(&n, &AbstractMarking::initial(&n), 4, 100).to_json().to_string(), a);
    }
}

#[test]
fn concrete_traces_are_paths_in_the_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut checked = 0;
    for i in 0..150 {
        let def = random_definition(&mut rng, i);
        let n = build_net(&def).unwrap();
        let g = reachability(&n, &AbstractMarking::initial(&n), 64, 100_000);
        if g.is_truncated() {
            continue;
        }
        let mut m = Marking::initial(&n);
        let mut path = Vec::new();
        for step in 0..20 {
            let enabled = enabled_transitions(&n, &m, 0, &Env::bare());
            if enabled.is_empty() {
                break;
            }
            let pick = enabled[(step * 7 + i) % enabled.len()].transition.id.clone();
            if fire_mut(&n, &mut m, &pick, 0, &Env::bare()).is_ok() {
                path.push(pick);
            }
        }
        assert!(g.accepts_path(path.iter().map(String::as_str)), "net {i} path {path:?}");
        checked += 1;
    }
    assert!(checked > 50);
}
