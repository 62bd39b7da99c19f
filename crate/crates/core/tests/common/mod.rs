#![allow(dead_code)]

use std::collections::BTreeMap;

use proptest::prelude::*;
use repro_core::action::{Action, ArtifactRef, Predicate, Value};
use repro_core::batch::{self, RunSpec};
use repro_core::engine::{self, ExecutionPolicy, RunResult};
use repro_core::planner::PlannerMode;
use repro_core::store::{ArtifactStore, ContentHash};
use repro_core::trace::{ExecutionTrace, NodeStatus, TraceNode};
use repro_core::workload::{self, TrainerVariant, WorkloadConfig};

pub const BASE_FIELDS: [&str; 8] = [
    "action",
    "env_hash",
    "finished_at",
    "node_id",
    "outputs",
    "parents",
    "started_at",
    "status",
];

pub fn spec(planner: PlannerMode, trainer: TrainerVariant, provenance: bool) -> RunSpec {
    RunSpec {
        trace_id: format!("test-{}", planner.as_str()),
        planner,
        trainer,
        policy: ExecutionPolicy {
            provenance_enabled: provenance,
            ..ExecutionPolicy::default()
        },
        workload: WorkloadConfig::default(),
    }
}

/// The canonical constrained run: history-fed planner, provenance on, seed 42.
pub fn canonical_run(store: &ArtifactStore) -> RunResult {
    batch::execute(&spec(PlannerMode::HistoryFed, TrainerVariant::Standard, true), store).unwrap()
}

pub fn failure_run(store: &ArtifactStore) -> RunResult {
    batch::execute(&spec(PlannerMode::HistoryFed, TrainerVariant::FaultInjection, true), store).unwrap()
}

// ---- strategies ----

pub fn identifier() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,7}"
}

pub fn leaf_value() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::Int),
        any::<f64>()
            .prop_filter("finite", |f| f.is_finite())
            .prop_map(Value::Float),
        any::<String>().prop_map(Value::Str),
    ]
}

pub fn value() -> impl Strategy<Value = Value> {
    leaf_value().prop_recursive(2, 12, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Value::List),
            prop::collection::btree_map(any::<String>(), inner, 0..4).prop_map(Value::Map),
        ]
    })
}

pub fn artifact_ref() -> impl Strategy<Value = ArtifactRef> {
    prop_oneof![
        value().prop_map(ArtifactRef::Inline),
        any::<[u8; 32]>().prop_map(|d| ArtifactRef::Content(ContentHash::from_digest(d))),
        (0u32..20, identifier()).prop_map(|(n, out)| ArtifactRef::node_output(&format!("a{n}"), &out)),
    ]
}

pub fn predicate() -> impl Strategy<Value = Predicate> {
    prop_oneof![
        identifier().prop_map(Predicate::ArtifactExists),
        identifier().prop_map(Predicate::ArtifactAbsent),
        (identifier(), leaf_value()).prop_map(|(k, v)| Predicate::ParamEquals(k, v)),
    ]
}

/// An action plus its parameters in the order they were inserted.
pub fn action_parts() -> impl Strategy<Value = (Action, Vec<(String, Value)>)> {
    (
        identifier(),
        0u32..100,
        prop::collection::btree_map(identifier(), artifact_ref(), 0..4),
        prop::collection::btree_map(identifier(), value(), 0..5),
        prop::collection::vec(predicate(), 0..3),
        prop::collection::btree_set(identifier(), 0..3),
        prop::collection::btree_map(identifier(), any::<u64>(), 0..3),
        any::<u64>(),
    )
        .prop_map(|(ty, n, inputs, params, preconds, effects, seeds, ts)| {
            let mut b = Action::builder(ty).id(format!("a{n}")).logical_timestamp(ts);
            for (k, v) in inputs {
                b = b.input(k, v);
            }
            let ordered: Vec<_> = params.into_iter().collect();
            for (k, v) in &ordered {
                b = b.param(k.clone(), v.clone());
            }
            for p in preconds {
                b = b.precondition(p);
            }
            for e in effects {
                b = b.produces(e);
            }
            for (k, s) in seeds {
                b = b.seed(k, s);
            }
            (b.build(), ordered)
        })
}

pub fn action() -> impl Strategy<Value = Action> {
    action_parts().prop_map(|(a, _)| a)
}

/// Parent lists for a DAG over `n` nodes where node `i` may only depend on
/// nodes `< i`.
pub fn dag(max_nodes: usize) -> impl Strategy<Value = Vec<Vec<usize>>> {
    (1..=max_nodes).prop_flat_map(|n| {
        (0..n)
            .map(|i| {
                prop::collection::btree_set(0..i.max(1), 0..=i.min(3))
                    .prop_map(move |s| s.into_iter().filter(|&p| p < i).collect::<Vec<_>>())
            })
            .collect::<Vec<_>>()
    })
}

/// Builds a trace from a DAG. Node `i` gets id `ids[i]`; appended in index
/// order so parents always exist.
pub fn trace_from_dag(parents: &[Vec<usize>], ids: &[String]) -> ExecutionTrace {
    let registry = workload::standard_registry();
    let binding = engine::environment_binding(&registry, "test");
    let mut trace = ExecutionTrace::new("prop");
    let env_hash = trace.bind_environment(binding);
    for (i, ps) in parents.iter().enumerate() {
        let action = Action::builder("load_data")
            .id(ids[i].clone())
            .param("seed", 1i64)
            .logical_timestamp(2 * i as u64)
            .build();
        let outputs = BTreeMap::from([("out".to_string(), ContentHash::of(ids[i].as_bytes()))]);
        trace
            .append_node(TraceNode {
                node_id: ids[i].clone(),
                action,
                status: NodeStatus::Success,
                outputs,
                env_hash,
                started_at: 2 * i as u64,
                finished_at: 2 * i as u64 + 1,
                parents: ps.iter().map(|&p| ids[p].clone()).collect(),
                failure: None,
                recovery_of: None,
            })
            .unwrap();
    }
    trace
}

/// Valid topological order that is lexicographically smallest by append
/// position, by exhaustive search over all permutations.
pub fn brute_force_min_topo(trace: &ExecutionTrace) -> Vec<String> {
    let mut ids: Vec<String> = trace.nodes().iter().map(|n| n.node_id.clone()).collect();
    let positions = |perm: &[String]| -> Vec<usize> { perm.iter().map(|id| trace.position(id).unwrap()).collect() };
    let mut best: Option<Vec<String>> = None;
    permute(&mut ids, 0, &mut |perm| {
        if is_topological(trace, perm) && best.as_deref().is_none_or(|b| positions(perm) < positions(b)) {
            best = Some(perm.to_vec());
        }
    });
    best.expect("a DAG has at least one topological order")
}

pub fn is_topological(trace: &ExecutionTrace, order: &[String]) -> bool {
    if order.len() != trace.len() {
        return false;
    }
    let pos: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    trace.nodes().iter().all(|n| {
        let Some(&me) = pos.get(n.node_id.as_str()) else {
            return false;
        };
        n.parents.iter().all(|p| pos.get(p.as_str()).is_some_and(|&pp| pp < me))
    })
}

fn permute(items: &mut Vec<String>, k: usize, visit: &mut impl FnMut(&[String])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

// ---- finite differences ----

/// Mean log-loss, using the platform `exp`/`ln`.
pub fn log_loss(params: &[f64; 5], rows: &[([f64; 4], u8)]) -> f64 {
    let mut total = 0.0;
    for (x, y) in rows {
        let z: f64 = (0..4).map(|j| params[j] * x[j]).sum::<f64>() + params[4];
        let p = 1.0 / (1.0 + (-z).exp());
        total += if *y == 1 { -p.ln() } else { -(1.0 - p).ln() };
    }
    total / rows.len() as f64
}

pub fn central_difference(params: &[f64; 5], rows: &[([f64; 4], u8)], h: f64) -> [f64; 5] {
    let mut grad = [0.0; 5];
    for k in 0..5 {
        let mut up = *params;
        let mut down = *params;
        up[k] += h;
        down[k] -= h;
        grad[k] = (log_loss(&up, rows) - log_loss(&down, rows)) / (2.0 * h);
    }
    grad
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-9 {
        return 0.0;
    }
    (a - b).abs() / scale
}

/// Five rows with bounded features drawn from `seed`.
pub fn five_rows(seed: u64) -> Vec<([f64; 4], u8)> {
    let mut rng = workload::SplitMix64::new(seed);
    (0..5)
        .map(|_| {
            let mut x = [0.0; 4];
            for v in &mut x {
                *v = rng.next_unit() * 4.0 - 2.0;
            }
            (x, (rng.next_u64() >> 63) as u8)
        })
        .collect()
}

pub fn max_gradient_error(seed: u64) -> f64 {
    let rows = five_rows(seed);
    let mut rng = workload::SplitMix64::new(seed ^ 0x5555);
    let mut params = [0.0; 5];
    for p in &mut params {
        *p = rng.next_unit() * 2.0 - 1.0;
    }
    let weights = [params[0], params[1], params[2], params[3]];
    let (gw, gb) = workload::numerics::logistic_gradient(&weights, params[4], &rows);
    let fd = central_difference(&params, &rows, 1e-6);
    let analytic = [gw[0], gw[1], gw[2], gw[3], gb];
    (0..5)
        .map(|k| relative_error(analytic[k], fd[k]))
        .fold(0.0, f64::max)
}

pub fn provenance_specs() -> Vec<RunSpec> {
    let mut specs = Vec::new();
    for planner in [PlannerMode::Scripted, PlannerMode::HistoryFree, PlannerMode::HistoryFed] {
        for trainer in [TrainerVariant::Standard, TrainerVariant::FaultInjection] {
            for seed in [1u64, 42, 7_000_003] {
                let mut s = spec(planner, trainer, true);
                s.workload.seed = seed;
                s.workload.iterations = 40;
                specs.push(s);
            }
        }
    }
    specs
}
