mod common;

use proptest::prelude::*;
use repro_core::action::Action;
use repro_core::batch;
use repro_core::store::{ArtifactStore, ContentHash};
use repro_core::trace::ExecutionTrace;

proptest! {
    #![proptest_config(ProptestConfig { cases: 96, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn action_canonical_round_trip(action in common::action()) {
        let bytes = action.canonical_bytes();
        let back = Action::parse(&bytes).unwrap();
        prop_assert_eq!(back.canonical_bytes(), bytes);
    }

    #[test]
    fn parameter_insertion_order_is_irrelevant(parts in common::action_parts()) {
        let (action, params) = parts;
        let mut b = Action::builder(action.action_type()).id(action.id());
        for (k, v) in action.inputs() {
            b = b.input(k.clone(), v.clone());
        }
        for (k, v) in params.iter().rev() {
            b = b.param(k.clone(), v.clone());
        }
        for p in action.preconditions() {
            b = b.precondition(p.clone());
        }
        for e in action.effects() {
            b = b.produces(e.output());
        }
        for (k, s) in action.metadata().seeds.iter().rev() {
            b = b.seed(k.clone(), *s);
        }
        let rebuilt = b.logical_timestamp(action.metadata().logical_timestamp).build();
        prop_assert_eq!(rebuilt.canonical_bytes(), action.canonical_bytes());
    }

    #[test]
    fn trace_file_round_trip(parents in common::dag(8)) {
        let ids: Vec<String> = (0..parents.len()).map(|i| format!("a{i}")).collect();
        let trace = common::trace_from_dag(&parents, &ids);
        let bytes = trace.save();
        let back = ExecutionTrace::load(&bytes).unwrap();
        prop_assert_eq!(back.save(), bytes);
        prop_assert_eq!(back, trace);
    }

    #[test]
    fn memory_store_get_put_identity(payload in prop::collection::vec(any::<u8>(), 0..2048)) {
        let store = ArtifactStore::in_memory();
        let hash = store.put(&payload).unwrap();
        prop_assert_eq!(hash, ContentHash::of(&payload));
        prop_assert_eq!(store.get(&hash).unwrap(), payload);
    }

    #[test]
    fn topo_order_is_minimal_valid_order(parents in common::dag(8), stride in prop::sample::select(vec![1usize, 3, 5, 7])) {
        let ids: Vec<String> = (0..parents.len()).map(|i| format!("n{}", (i * stride) % 8)).collect();
        let trace = common::trace_from_dag(&parents, &ids);
        let order = trace.topo_order();
        prop_assert!(common::is_topological(&trace, &order));
        prop_assert_eq!(order, common::brute_force_min_topo(&trace));
    }

    #[test]
    fn appended_traces_stay_acyclic(parents in common::dag(12)) {
        let ids: Vec<String> = (0..parents.len()).map(|i| format!("a{i}")).collect();
        let trace = common::trace_from_dag(&parents, &ids);
        prop_assert_eq!(trace.topo_order().len(), trace.len());
    }

    #[test]
    fn whitespace_in_a_record_is_rejected(parents in common::dag(4), line in 0usize..4) {
        let ids: Vec<String> = (0..parents.len()).map(|i| format!("a{i}")).collect();
        let text = String::from_utf8(common::trace_from_dag(&parents, &ids).save()).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let target = line % lines.len();
        lines[target] = lines[target].replacen(':', ": ", 1);
        let tampered = lines.join("\n") + "\n";
        prop_assert!(ExecutionTrace::load(tampered.as_bytes()).is_err());
    }
}

#[test]
fn disk_store_get_put_identity() {
    let dir = tempfile::tempdir().unwrap();
    let store = ArtifactStore::open(dir.path()).unwrap();
    let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig {
        cases: 48,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    runner
        .run(&prop::collection::vec(any::<u8>(), 0..1024), |payload| {
            let hash = store.put(&payload).unwrap();
            prop_assert_eq!(store.get(&hash).unwrap(), payload);
            prop_assert!(store.object_path(&hash).unwrap().exists());
            Ok(())
        })
        .unwrap();
    assert!(store.audit().unwrap().is_clean());
}

#[test]
fn gradient_matches_central_differences() {
    for seed in 0..64 {
        let err = common::max_gradient_error(seed);
        assert!(err < 1e-5, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn executed_equals_logged_under_provenance() {
    let store = ArtifactStore::in_memory();
    for run in batch::run_batch(&common::provenance_specs(), &store) {
        let run = run.unwrap();
        assert_eq!(run.executed_count, run.logged_count());
    }
}
