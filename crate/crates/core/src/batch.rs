//! Independent workflow runs, executed as a batch.
//!
//! A single run is strictly sequential. Distinct runs share nothing but the
//! artifact store (safe under concurrent puts), so a batch of them is
//! data-parallel. With the `parallel` feature (default) batches fan out over
//! rayon; without it they run in order. Results are returned in input order
//! either way.

use std::sync::Arc;

use crate::engine::{run_workflow, Engine, EngineError, ExecutionPolicy, RunResult};
use crate::planner::PlannerMode;
use crate::store::ArtifactStore;
use crate::workload::{self, TrainerVariant, WorkloadConfig};

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub trace_id: String,
    pub planner: PlannerMode,
    pub trainer: TrainerVariant,
    pub policy: ExecutionPolicy,
    pub workload: WorkloadConfig,
}

impl RunSpec {
    pub fn engine(&self, store: &ArtifactStore) -> Engine {
        Engine::new(Arc::new(workload::registry(self.trainer)), store.clone())
    }
}

/// Runs one spec against `store` with a fresh registry.
pub fn execute(spec: &RunSpec, store: &ArtifactStore) -> Result<RunResult, EngineError> {
    let engine = spec.engine(store);
    let planner = spec.planner.build(spec.workload);
    let ctx = engine.context(&spec.trace_id, spec.policy)?;
    run_workflow(planner.as_ref(), ctx)
}

pub fn run_batch_sequential(specs: &[RunSpec], store: &ArtifactStore) -> Vec<Result<RunResult, EngineError>> {
    specs.iter().map(|spec| execute(spec, store)).collect()
}

#[cfg(feature = "parallel")]
pub fn run_batch_parallel(specs: &[RunSpec], store: &ArtifactStore) -> Vec<Result<RunResult, EngineError>> {
    use rayon::prelude::*;
    specs.par_iter().map(|spec| execute(spec, store)).collect()
}

/// Parallel when the `parallel` feature is enabled, sequential otherwise.
pub fn run_batch(specs: &[RunSpec], store: &ArtifactStore) -> Vec<Result<RunResult, EngineError>> {
    #[cfg(feature = "parallel")]
    {
        run_batch_parallel(specs, store)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_batch_sequential(specs, store)
    }
}

/// `k` copies of `spec`.
pub fn repeated(spec: &RunSpec, k: usize) -> Vec<RunSpec> {
    vec![spec.clone(); k]
}
