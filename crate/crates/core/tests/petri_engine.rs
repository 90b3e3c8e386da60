use proptest::prelude::*;
use serde_json::json;
use tuftwin_core::petri::{
    build_net, enabled_transitions, fire, payload, run_to_quiescence, trace_to_jsonl, Env,
    GuardContext, GuardRegistry, Marking, Net, NetDefinition, PetriError, Scalar,
};

fn net(value: serde_json::Value) -> Net {
    let def: NetDefinition = serde_json::from_value(value).unwrap();
    build_net(&def).unwrap()
}

fn chain(delay: i64) -> Net {
    net(json!({
        "net_id": "chain",
        "places": [{"id": "p1", "name": "P1", "initial": [{}]}, {"id": "p2", "name": "P2"}],
        "transitions": [{"id": "t", "name": "T", "delay": delay,
            "inputs": [{"place": "p1", "weight": 1}],
            "outputs": [{"place": "p2", "weight": 1}]}]
    }))
}

fn linear(n: usize) -> Net {
    let places: Vec<_> = (0..=n)
        .map(|i| {
            if i == 0 {
                json!({"id": format!("p{i}"), "name": "p", "initial": [{}]})
            } else {
                json!({"id": format!("p{i}"), "name": "p"})
            }
        })
        .collect();
    let transitions: Vec<_> = (0..n)
        .map(|i| {
            json!({"id": format!("t{i}"), "name": "t",
                   "inputs": [{"place": format!("p{i}"), "weight": 1}],
                   "outputs": [{"place": format!("p{}", i + 1), "weight": 1}]})
        })
        .collect();
    net(json!({"net_id": "linear", "places": places, "transitions": transitions}))
}

fn cycle() -> Net {
    net(json!({
        "net_id": "cycle",
        "places": [{"id": "a", "name": "A", "initial": [{}]}, {"id": "b", "name": "B"}],
        "transitions": [
            {"id": "ab", "name": "ab", "inputs": [{"place": "a"}], "outputs": [{"place": "b"}]},
            {"id": "ba", "name": "ba", "inputs": [{"place": "b"}], "outputs": [{"place": "a"}]}
        ]
    }))
}

fn ids(m: &Marking, net: &Net, place: &str) -> Vec<u64> {
    m.tokens(net, place).unwrap().iter().map(|t| t.id().0).collect()
}

#[test]
fn empty_marking_enables_nothing() {
    let n = chain(0);
    let m = Marking::empty(&n);
    assert!(enabled_transitions(&n, &m, 0, &Env::bare()).is_empty());
}

#[test]
fn future_token_defers_enabling() {
    let n = chain(0);
    let mut m = Marking::empty(&n);
    let tok = m.mint(Default::default(), 0, 5).unwrap();
    m.inject_mut(&n, "p1", tok).unwrap();
    assert!(enabled_transitions(&n, &m, 0, &Env::bare()).is_empty());
    assert_eq!(enabled_transitions(&n, &m, 5, &Env::bare()).len(), 1);
}

#[test]
fn enabled_order_is_priority_then_id() {
    let n = net(json!({
        "net_id": "prio",
        "places": [{"id": "p", "name": "p", "initial": [{}, {}]}],
        "transitions": [
            {"id": "a_low", "name": "low", "priority": 1, "inputs": [{"place": "p"}]},
            {"id": "z_high", "name": "high", "priority": 3, "inputs": [{"place": "p"}]},
            {"id": "b_low", "name": "low2", "priority": 1, "inputs": [{"place": "p"}]}
        ]
    }));
    let m = Marking::initial(&n);
    let order: Vec<_> = enabled_transitions(&n, &m, 0, &Env::bare())
        .iter()
        .map(|e| e.transition.id.clone())
        .collect();
    assert_eq!(order, ["z_high", "a_low", "b_low"]);
}

#[test]
fn elementary_firing_moves_token() {
    let n = chain(0);
    let m = Marking::initial(&n);
    let (next, rec) = fire(&n, &m, "t", 0, &Env::bare()).unwrap();
    assert_eq!(next.count(&n, "p1"), 0);
    assert_eq!(next.count(&n, "p2"), 1);
    assert_eq!(rec.consumed[0].tokens.len(), 1);
    assert_eq!(rec.produced[0].tokens.len(), 1);
    // the input marking is untouched
    assert_eq!(m.count(&n, "p1"), 1);
}

#[test]
fn delay_sets_ready_at() {
    let n = chain(3);
    let mut m = Marking::empty(&n);
    let tok = m.mint(Default::default(), 10, 10).unwrap();
    m.inject_mut(&n, "p1", tok).unwrap();
    let (next, _) = fire(&n, &m, "t", 10, &Env::bare()).unwrap();
    let out = &next.tokens(&n, "p2").unwrap()[0];
    assert_eq!(out.created_at(), 10);
    assert_eq!(out.ready_at(), 13);
}

fn fused() -> Net {
    net(json!({
        "net_id": "fused",
        "places": [
            {"id": "src", "name": "src", "initial": [{}]},
            {"id": "left", "name": "left", "fusion_group": "g"},
            {"id": "right", "name": "right", "capacity": 1}
        ],
        "transitions": [{"id": "t", "name": "t", "inputs": [{"place": "src"}], "outputs": [{"place": "left"}]}],
        "fusion_groups": {"g": ["left", "right"]}
    }))
}

#[test]
fn firing_into_fusion_place_is_visible_through_alias() {
    let n = fused();
    let (m, _) = fire(&n, &Marking::initial(&n), "t", 0, &Env::bare()).unwrap();
    assert_eq!(ids(&m, &n, "left"), ids(&m, &n, "right"));
    assert_eq!(m.count(&n, "right"), 1);
    assert!(m.fusion_coherent(&n));
}

#[test]
fn inject_cases() {
    let n = fused();
    let mut m = Marking::empty(&n);
    let t1 = m.mint(Default::default(), 0, 0).unwrap();
    let m = m.inject(&n, "left", t1).unwrap();
    assert_eq!(m.count(&n, "right"), 1, "visible through sibling alias");

    // The group takes the smallest member capacity (1).
    let mut m2 = m.clone();
    let t2 = m2.mint(Default::default(), 0, 0).unwrap();
    assert!(matches!(
        m2.inject(&n, "left", t2.clone()),
        Err(PetriError::CapacityExceeded { capacity: 1, .. })
    ));
    assert!(matches!(m2.inject(&n, "nope", t2), Err(PetriError::UnknownPlace(_))));

    let mut e = Marking::empty(&n);
    let t = e.mint(Default::default(), 0, 0).unwrap();
    let e = e.inject(&n, "src", t).unwrap();
    assert_eq!(e.count(&n, "src"), 1);
}

#[test]
fn capacity_violation_rejects_firing_and_keeps_marking() {
    let n = net(json!({
        "net_id": "cap",
        "places": [
            {"id": "a", "name": "a", "initial": [{}, {}]},
            {"id": "flag", "name": "flag", "capacity": 1, "initial": [{}]}
        ],
        "transitions": [{"id": "t", "name": "t", "inputs": [{"place": "a"}], "outputs": [{"place": "flag"}]}]
    }));
    let m = Marking::initial(&n);
    assert!(matches!(
        fire(&n, &m, "t", 0, &Env::bare()),
        Err(PetriError::CapacityExceeded { .. })
    ));
}

#[test]
fn not_enabled_is_an_error() {
    let n = chain(0);
    let m = Marking::empty(&n);
    assert!(matches!(fire(&n, &m, "t", 0, &Env::bare()), Err(PetriError::NotEnabled(_))));
}

#[test]
fn quiescence_cases() {
    let n = chain(0);
    let done = fire(&n, &Marking::initial(&n), "t", 0, &Env::bare()).unwrap().0;
    let (same, trace) = run_to_quiescence(&n, &done, 0, 10, &Env::bare()).unwrap();
    assert_eq!(same, done);
    assert!(trace.is_empty());

    let n = linear(3);
    let (m, trace) = run_to_quiescence(&n, &Marking::initial(&n), 0, 10, &Env::bare()).unwrap();
    assert_eq!(trace.len(), 3);
    assert_eq!(m.count(&n, "p3"), 1);

    let n = cycle();
    assert_eq!(
        run_to_quiescence(&n, &Marking::initial(&n), 0, 100, &Env::bare()).unwrap_err(),
        PetriError::NonQuiescent { steps: 100 }
    );
}

#[test]
fn quiescence_stops_at_delayed_tokens() {
    let n = net(json!({
        "net_id": "delayed",
        "places": [{"id": "a", "name": "a", "initial": [{}]}, {"id": "b", "name": "b"}, {"id": "c", "name": "c"}],
        "transitions": [
            {"id": "t1", "name": "t1", "delay": 2, "inputs": [{"place": "a"}], "outputs": [{"place": "b"}]},
            {"id": "t2", "name": "t2", "inputs": [{"place": "b"}], "outputs": [{"place": "c"}]}
        ]
    }));
    let (m, trace) = run_to_quiescence(&n, &Marking::initial(&n), 0, 10, &Env::bare()).unwrap();
    assert_eq!(trace.len(), 1);
    let (m, trace) = run_to_quiescence(&n, &m, 2, 10, &Env::bare()).unwrap();
    assert_eq!(trace.len(), 1);
    assert_eq!(m.count(&n, "c"), 1);
}

#[test]
fn guards_see_fifo_binding_and_context() {
    let n = net(json!({
        "net_id": "guarded",
        "places": [{"id": "in", "name": "in"}, {"id": "out", "name": "out"}],
        "transitions": [{"id": "t", "name": "t", "guard": "color_red_when_open",
            "inputs": [{"place": "in"}], "outputs": [{"place": "out"}]}]
    }));
    let guards = GuardRegistry::new().with("color_red_when_open", |ctx: &GuardContext<'_>| {
        ctx.snapshot["door"] == "open"
            && ctx.binding[0].get("color") == Some(&Scalar::from("red"))
    });
    let mut m = Marking::empty(&n);
    for color in ["blue", "red"] {
        let t = m.mint(payload([("color", color)]), 0, 0).unwrap();
        m.inject_mut(&n, "in", t).unwrap();
    }
    let open = json!({"door": "open"});
    // FIFO-oldest token is blue: no backtracking to the red one.
    assert!(enabled_transitions(&n, &m, 0, &Env::new(&guards, &open)).is_empty());
    m.drain(&n, "in").unwrap();
    let t = m.mint(payload([("color", "red")]), 0, 0).unwrap();
    m.inject_mut(&n, "in", t).unwrap();
    assert_eq!(enabled_transitions(&n, &m, 0, &Env::new(&guards, &open)).len(), 1);
    let closed = json!({"door": "closed"});
    assert!(enabled_transitions(&n, &m, 0, &Env::new(&guards, &closed)).is_empty());
}

#[test]
fn payload_rules() {
    let n = net(json!({
        "net_id": "rules",
        "places": [{"id": "a", "name": "a"}, {"id": "b", "name": "b"},
                   {"id": "copy", "name": "c"}, {"id": "lit", "name": "l"},
                   {"id": "merge", "name": "m"}, {"id": "age", "name": "e"}],
        "transitions": [{"id": "t", "name": "t",
            "inputs": [{"place": "a"}, {"place": "b"}],
            "outputs": [
                {"place": "copy", "payload_rule": {"copy": 1}},
                {"place": "lit", "payload_rule": {"literal": {"k": 7}}},
                {"place": "merge", "payload_rule": "merge"},
                {"place": "age", "payload_rule": {"elapsed": 0}}
            ]}]
    }));
    let mut m = Marking::empty(&n);
    let ta = m.mint(payload([("x", 1i64), ("shared", 1)]), 5, 5).unwrap();
    m.inject_mut(&n, "a", ta).unwrap();
    let tb = m.mint(payload([("y", 2i64), ("shared", 2)]), 9, 9).unwrap();
    m.inject_mut(&n, "b", tb).unwrap();
    let (m, _) = fire(&n, &m, "t", 12, &Env::bare()).unwrap();
    let get = |p: &str| m.tokens(&n, p).unwrap()[0].payload().clone();
    assert_eq!(get("copy"), payload([("y", 2i64), ("shared", 2)]));
    assert_eq!(get("lit"), payload([("k", 7i64)]));
    assert_eq!(get("merge"), payload([("x", 1i64), ("y", 2), ("shared", 2)]));
    assert_eq!(get("age"), payload([("x", 1i64), ("shared", 1), ("duration_ticks", 7)]));
}

#[test]
fn trace_lines_have_fixed_field_order() {
    let n = linear(1);
    let (_, trace) = run_to_quiescence(&n, &Marking::initial(&n), 4, 5, &Env::bare()).unwrap();
    assert_eq!(
        trace_to_jsonl(&trace),
        "{\"tick\":4,\"transition_id\":\"t0\",\"consumed\":[{\"place\":\"p0\",\"tokens\":[0]}],\"produced\":[{\"place\":\"p1\",\"tokens\":[1]}]}\n"
    );
}

#[test]
fn repeated_runs_are_byte_identical() {
    let n = net(json!({
        "net_id": "fanout",
        "places": [{"id": "s", "name": "s", "initial": [{}, {}, {}]},
                   {"id": "x", "name": "x"}, {"id": "y", "name": "y"}],
        "transitions": [
            {"id": "tx", "name": "tx", "inputs": [{"place": "s"}], "outputs": [{"place": "x", "weight": 2}]},
            {"id": "ty", "name": "ty", "inputs": [{"place": "x", "weight": 2}], "outputs": [{"place": "y"}]}
        ]
    }));
    let reference = trace_to_jsonl(
        &run_to_quiescence(&n, &Marking::initial(&n), 0, 50, &Env::bare()).unwrap().1,
    );
    for _ in 0..100 {
        let (_, trace) = run_to_quiescence(&n, &Marking::initial(&n), 0, 50, &Env::bare()).unwrap();
        assert_eq!(trace_to_jsonl(&trace), reference);
    }
}

// ---- property tests over random nets ----

#[derive(Debug, Clone)]
struct RandomNet {
    places: usize,
    transitions: Vec<(Vec<(usize, i64)>, Vec<(usize, i64)>, i64, i64)>,
    initial: Vec<usize>,
    fuse: Option<(usize, usize)>,
}

fn random_net() -> impl Strategy<Value = RandomNet> {
    (2usize..=6).prop_flat_map(|places| {
        let arc = (0..places, 1i64..=2);
        let transition = (
            prop::collection::vec(arc.clone(), 1..=2),
            prop::collection::vec(arc, 0..=2),
            0i64..=2,
            0i64..=3,
        );
        (
            Just(places),
            prop::collection::vec(transition, 1..=6),
            prop::collection::vec(0..places, 0..=3),
            prop::option::of((0..places, 0..places)),
        )
            .prop_map(|(places, transitions, initial, fuse)| RandomNet {
                places,
                transitions,
                initial,
                fuse: fuse.filter(|(a, b)| a != b),
            })
    })
}

impl RandomNet {
    fn build(&self) -> Net {
        let places: Vec<_> = (0..self.places)
            .map(|i| {
                let init: Vec<_> = self
                    .initial
                    .iter()
                    .filter(|&&p| p == i)
                    .map(|_| json!({"seed": i}))
                    .collect();
                json!({"id": format!("p{i}"), "name": "p", "initial": init})
            })
            .collect();
        let transitions: Vec<_> = self
            .transitions
            .iter()
            .enumerate()
            .map(|(i, (ins, outs, prio, delay))| {
                json!({"id": format!("t{i}"), "name": "t", "priority": prio, "delay": delay,
                    "inputs": ins.iter().map(|(p, w)| json!({"place": format!("p{p}"), "weight": w})).collect::<Vec<_>>(),
                    "outputs": outs.iter().map(|(p, w)| json!({"place": format!("p{p}"), "weight": w})).collect::<Vec<_>>()})
            })
            .collect();
        let mut fusion = serde_json::Map::new();
        if let Some((a, b)) = self.fuse {
            fusion.insert("g".into(), json!([format!("p{a}"), format!("p{b}")]));
        }
        net(json!({"net_id": "rnd", "places": places, "transitions": transitions, "fusion_groups": fusion}))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn firing_conserves_tokens_and_respects_fifo(rn in random_net(), steps in 1usize..12) {
        let n = rn.build();
        let mut m = Marking::initial(&n);
        let mut now = 0;
        for _ in 0..steps {
            let enabled = enabled_transitions(&n, &m, now, &Env::bare());
            let Some(first) = enabled.first() else { now += 1; continue };
            let t = first.transition;
            // FIFO: the binding is the oldest ready tokens of each input store
            for (arc, bound) in t.inputs.iter().zip(&first.binding) {
                let ready: Vec<_> = m.tokens(&n, &arc.place).unwrap().iter()
                    .filter(|tok| tok.ready_at() <= now).map(|tok| tok.id()).collect();
                prop_assert!(ready.len() >= bound.len());
            }
            let before = m.total_tokens();
            let (next, rec) = fire(&n, &m, &t.id, now, &Env::bare()).unwrap();
            prop_assert_eq!(next.total_tokens() + t.consumed_count() as usize, before + t.produced_count() as usize);
            for (arc, got) in t.inputs.iter().zip(&rec.consumed) {
                prop_assert_eq!(got.tokens.len(), arc.weight as usize);
            }
            for (arc, got) in t.outputs.iter().zip(&rec.produced) {
                prop_assert_eq!(got.tokens.len(), arc.weight as usize);
                for id in &got.tokens {
                    let tok = next.tokens(&n, &arc.place).unwrap().iter().find(|x| x.id() == *id).unwrap();
                    prop_assert!(tok.ready_at() >= now);
                    prop_assert_eq!(tok.ready_at(), now + t.delay);
                }
            }
            // untouched stores keep their exact token sequences
            let touched: Vec<usize> = t.input_places().iter().chain(t.output_places())
                .map(|&p| n.storage_of(p)).collect();
            for slot in 0..n.storage_len() {
                if !touched.contains(&slot) {
                    prop_assert_eq!(m.slot(slot), next.slot(slot));
                }
            }
            prop_assert!(next.fusion_coherent(&n));
            m = next;
            now += 1;
        }
    }

    #[test]
    fn consumed_tokens_are_the_oldest_ready(rn in random_net()) {
        let n = rn.build();
        let m = Marking::initial(&n);
        for e in enabled_transitions(&n, &m, 0, &Env::bare()) {
            let (_, rec) = fire(&n, &m, &e.transition.id, 0, &Env::bare()).unwrap();
            let mut taken: std::collections::HashMap<usize, usize> = Default::default();
            for (arc, got) in e.transition.inputs.iter().zip(&rec.consumed) {
                let slot = n.storage_of(n.place_index(&arc.place).unwrap());
                let skip = taken.entry(slot).or_default();
                let expect: Vec<_> = m.slot(slot).iter().skip(*skip).take(arc.weight as usize).map(|t| t.id()).collect();
                *skip += arc.weight as usize;
                prop_assert_eq!(&got.tokens, &expect);
            }
        }
    }

    #[test]
    fn enabled_list_is_stable(rn in random_net()) {
        let n = rn.build();
        let m = Marking::initial(&n);
        let a: Vec<_> = enabled_transitions(&n, &m, 0, &Env::bare()).iter().map(|e| (e.index, e.binding.clone())).collect();
        let b: Vec<_> = enabled_transitions(&n, &m, 0, &Env::bare()).iter().map(|e| (e.index, e.binding.clone())).collect();
        prop_assert_eq!(a, b);
    }
}

// Malformed definitions: each mutation must be rejected by build_net.
#[derive(Debug, Clone)]
enum Defect {
    DanglingInput,
    TransitionEndpoint,
    DuplicatePlace,
    PlaceNamedLikeTransition,
    TwoGroups,
    GroupDanglingMember,
    ZeroWeight,
    NegativeDelay,
    ZeroCapacity,
    EmptyTransition,
    CopyOutOfRange,
    RuleOnInput,
}

fn defect() -> impl Strategy<Value = Defect> {
    prop_oneof![
        Just(Defect::DanglingInput),
        Just(Defect::TransitionEndpoint),
        Just(Defect::DuplicatePlace),
        Just(Defect::PlaceNamedLikeTransition),
        Just(Defect::TwoGroups),
        Just(Defect::GroupDanglingMember),
        Just(Defect::ZeroWeight),
        Just(Defect::NegativeDelay),
        Just(Defect::ZeroCapacity),
        Just(Defect::EmptyTransition),
        Just(Defect::CopyOutOfRange),
        Just(Defect::RuleOnInput),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn malformed_definitions_are_rejected(rn in random_net(), d in defect(), pick in any::<prop::sample::Index>()) {
        let mut def = rn.build().to_definition();
        let t = pick.index(def.transitions.len());
        let p = pick.index(def.places.len());
        match d {
            Defect::DanglingInput => def.transitions[t].inputs[0].place = "ghost".into(),
            Defect::TransitionEndpoint => def.transitions[t].inputs[0].place = def.transitions[t].id.clone(),
            Defect::DuplicatePlace => { let dup = def.places[p].clone(); def.places.push(dup); }
            Defect::PlaceNamedLikeTransition => def.places[p].id = def.transitions[t].id.clone(),
            Defect::TwoGroups => {
                def.places[p].fusion_group = Some("one".into());
                def.fusion_groups.insert("two".into(), vec![def.places[p].id.clone()]);
            }
            Defect::GroupDanglingMember => { def.fusion_groups.insert("g9".into(), vec!["ghost".into()]); }
            Defect::ZeroWeight => def.transitions[t].inputs[0].weight = 0,
            Defect::NegativeDelay => def.transitions[t].delay = Some(-1),
            Defect::ZeroCapacity => def.places[p].capacity = Some(0),
            Defect::EmptyTransition => { def.transitions[t].inputs.clear(); def.transitions[t].outputs.clear(); }
            Defect::CopyOutOfRange => {
                let place = def.places[p].id.clone();
                def.transitions[t].outputs.push(tuftwin_core::petri::ArcDefinition {
                    place, weight: 1, payload_rule: Some(tuftwin_core::petri::PayloadRule::Copy(99)) });
            }
            Defect::RuleOnInput => def.transitions[t].inputs[0].payload_rule = Some(tuftwin_core::petri::PayloadRule::Merge),
        }
        prop_assert!(build_net(&def).is_err(), "accepted defect {:?}", d);
    }
}
