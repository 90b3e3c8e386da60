//! Frontier expansion, sequential against rayon.
//!
//! `cargo bench -p tuftwin-core --bench reachability`; build with
//! `--no-default-features` to see the parallel strategy fall back.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use serde_json::json;
use tuftwin_core::activity::{close_with_environment, demonstrator_net, EnvironmentModel};
use tuftwin_core::analysis::{reachability_with, AbstractMarking};
use tuftwin_core::par::Exploration;
use tuftwin_core::petri::{build_net, Net, NetDefinition};
use tuftwin_core::session::ScenarioSpec;

const DEMO: &str = include_str!("../../../data/scenarios/demo.json");

fn demonstrator() -> Net {
    let spec = ScenarioSpec::from_json(DEMO).unwrap();
    let composed = demonstrator_net(&spec.activities).unwrap();
    close_with_environment(&composed, &spec.activities, EnvironmentModel::Sequential).unwrap()
}

/// `rings` independent token rings of `len` places: `len^rings` markings.
fn rings(rings: usize, len: usize) -> Net {
    let mut places = Vec::new();
    let mut transitions = Vec::new();
    for r in 0..rings {
        for i in 0..len {
            let mut p = json!({ "id": format!("r{r}.p{i}"), "name": "p" });
            if i == 0 {
                p["initial"] = json!([{}]);
            }
            places.push(p);
            transitions.push(json!({
                "id": format!("r{r}.t{i}"), "name": "t",
                "inputs": [{ "place": format!("r{r}.p{i}") }],
                "outputs": [{ "place": format!("r{r}.p{}", (i + 1) % len) }],
            }));
        }
    }
    let def: NetDefinition =
        serde_json::from_value(json!({ "net_id": "rings", "places": places, "transitions": transitions })).unwrap();
    build_net(&def).unwrap()
}

fn bench_frontier(c: &mut Criterion) {
    let nets = [("demonstrator", demonstrator()), ("rings-7x4", rings(7, 4))];
    let mut group = c.benchmark_group("reachability");
    group.sample_size(10);
    for (name, net) in &nets {
        let init = AbstractMarking::initial(net);
        for strategy in [Exploration::Sequential, Exploration::Parallel] {
            group.bench_with_input(BenchmarkId::new(format!("{strategy:?}"), name), net, |b, net| {
                b.iter(|| reachability_with(black_box(net), &init, 5, 1_000_000, strategy).nodes.len())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_frontier);
criterion_main!(benches);
