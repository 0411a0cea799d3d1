mod support;

use dnnperf::compiler::load_taskgraph;
use dnnperf::simengine::{simulate, SimTime};
use dnnperf::sysdesc::paper_like;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::*;

#[test]
fn hand_written_chain_document() {
    let doc = r#"{
        "tasks": [
            {"id": 0, "kind": "DmaLoad", "resource": "BUS", "cost": 128, "layer": "l", "tile": 0},
            {"id": 1, "kind": "Compute", "resource": "NCE", "cost": 250, "layer": "l", "tile": 0},
            {"id": 2, "kind": "DmaStore", "resource": "BUS", "cost": 64, "layer": "l", "tile": 0}
        ],
        "edges": [[0, 1], [1, 2]]
    }"#;
    let tg = load_taskgraph(doc).unwrap();
    let trace = simulate(&tg, &paper_like());
    assert_eq!(trace.makespan(), SimTime::from_ns(1096));
}

#[test]
fn matches_brute_force_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..300 {
        let tg = random_taskgraph(&mut rng, 7);
        let sys = random_system(&mut rng);
        assert_eq!(simulate(&tg, &sys).makespan().ps(), brute_force_makespan(&tg, &sys));
    }
}

#[test]
fn timings_match_reference_rules() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let tg = random_chain(&mut rng, 6);
        let sys = random_system(&mut rng);
        let trace = simulate(&tg, &sys);
        let mut t = 0;
        for task in tg.tasks() {
            let (o, s) = reference_timing(task, &sys);
            let iv = trace.interval(task.id).unwrap();
            assert_eq!((iv.start.ps(), iv.end.ps()), (t + o, t + o + s));
            t += o + s;
        }
    }
}

fn seed() -> impl Strategy<Value = u64> {
    any::<u64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn trace_invariants(s in seed()) {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let tg = random_taskgraph(&mut rng, 12);
        let sys = random_system(&mut rng);
        let trace = simulate(&tg, &sys);
        prop_assert_eq!(&trace, &simulate(&tg, &sys));
        let r = check_trace(&tg, &sys, &trace, is_uncontended(&tg));
        prop_assert!(r.is_ok(), "{}", r.unwrap_err());
    }

    #[test]
    fn chains_collapse_to_critical_path(s in seed()) {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let tg = random_chain(&mut rng, 10);
        let sys = random_system(&mut rng);
        let r = check_trace(&tg, &sys, &simulate(&tg, &sys), true);
        prop_assert!(r.is_ok(), "{}", r.unwrap_err());
    }
}
