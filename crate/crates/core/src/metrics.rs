//! Execution-correctness metrics and the three-pipeline comparison suite.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::batch::{self, RunSpec};
use crate::canonical;
use crate::engine::{EngineError, ExecutionPolicy, RunResult, Terminal};
use crate::planner::PlannerMode;
use crate::replay::{self, ReplayError};
use crate::store::ArtifactStore;
use crate::trace::{ExecutionTrace, NodeStatus};
use crate::workload::{TrainerVariant, WorkloadConfig, INJECTED_FAULT};

pub const DEFAULT_RUNS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pipeline {
    ScriptBased,
    #[serde(rename = "NaiveLAM")]
    NaiveLam,
    #[serde(rename = "RLAMConstrained")]
    RlamConstrained,
}

impl Pipeline {
    pub const ALL: [Pipeline; 3] = [Pipeline::ScriptBased, Pipeline::NaiveLam, Pipeline::RlamConstrained];

    pub fn label(self) -> &'static str {
        match self {
            Pipeline::ScriptBased => "Script-Based",
            Pipeline::NaiveLam => "Naive LAM",
            Pipeline::RlamConstrained => "R-LAM Constrained",
        }
    }

    fn planner(self) -> PlannerMode {
        match self {
            Pipeline::ScriptBased => PlannerMode::Scripted,
            Pipeline::NaiveLam => PlannerMode::HistoryFree,
            Pipeline::RlamConstrained => PlannerMode::HistoryFed,
        }
    }

    fn policy(self) -> ExecutionPolicy {
        let constrained = self == Pipeline::RlamConstrained;
        ExecutionPolicy {
            provenance_enabled: constrained,
            fail_fast: !constrained,
            ..ExecutionPolicy::default()
        }
    }

    fn clean_trainer(self) -> TrainerVariant {
        match self {
            Pipeline::NaiveLam => TrainerVariant::Unseeded,
            _ => TrainerVariant::Standard,
        }
    }

    /// Scripts have no trace to replay; their replay column scores re-run
    /// equality instead.
    fn replays_by_rerun(self) -> bool {
        self == Pipeline::ScriptBased
    }

    pub fn run_spec(self, workload: WorkloadConfig, inject_failure: bool) -> RunSpec {
        let suffix = if inject_failure { "failure" } else { "clean" };
        RunSpec {
            trace_id: format!("{}-{suffix}-seed{}", self.planner().as_str(), workload.seed),
            planner: self.planner(),
            trainer: if inject_failure {
                TrainerVariant::FaultInjection
            } else {
                self.clean_trainer()
            },
            policy: self.policy(),
            workload,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub pipeline: Pipeline,
    pub replay: f64,
    pub trace: f64,
    pub failure: f64,
    pub variance: f64,
}

impl MetricsRow {
    const fn new(pipeline: Pipeline, replay: f64, trace: f64, failure: f64, variance: f64) -> Self {
        Self {
            pipeline,
            replay,
            trace,
            failure,
            variance,
        }
    }
}

/// Reference values for the comparison table.
pub const EXPECTED_TABLE: [MetricsRow; 3] = [
    MetricsRow::new(Pipeline::ScriptBased, 1.0, 0.0, 1.0, 0.0),
    MetricsRow::new(Pipeline::NaiveLam, 0.0, 0.0, 1.0, 1.0),
    MetricsRow::new(Pipeline::RlamConstrained, 1.0, 1.0, 1.0, 0.0),
];

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("invariant violated: {logged} nodes logged but only {executed} actions executed")]
    InvariantViolation { logged: u64, executed: u64 },
    #[error("variance needs at least 2 runs, got {0}")]
    TooFewRuns(usize),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

/// Logged nodes over executed actions; 1.0 for an empty run.
pub fn trace_completeness(logged: u64, executed: u64) -> Result<f64, MetricsError> {
    if logged > executed {
        return Err(MetricsError::InvariantViolation { logged, executed });
    }
    if executed == 0 {
        return Ok(1.0);
    }
    Ok(logged as f64 / executed as f64)
}

/// 1 iff the run produced a trace and its replay verified against `reference`.
pub fn reproducibility_success(run: &RunResult, reference: &ArtifactStore) -> Result<u8, MetricsError> {
    let Some(trace) = &run.trace else {
        return Ok(0);
    };
    let mut replayed = replay::replay(trace, reference)?;
    Ok(replayed.verify(trace, reference))
}

/// 1 iff every run ended with the same final artifacts.
pub fn rerun_equality(runs: &[RunResult]) -> u8 {
    match runs.split_first() {
        Some((first, rest)) => u8::from(rest.iter().all(|r| r.final_outputs == first.final_outputs)),
        None => 0,
    }
}

/// 1 iff some pair of runs ended with different final artifacts.
pub fn variance(runs: &[RunResult]) -> Result<u8, MetricsError> {
    if runs.len() < 2 {
        return Err(MetricsError::TooFewRuns(runs.len()));
    }
    Ok(1 - rerun_equality(runs))
}

/// 1 iff the trace records a structured failure and every later attempt at
/// the failed action type is linked back as a recovery.
pub fn failure_visibility(trace: Option<&ExecutionTrace>) -> u8 {
    let Some(trace) = trace else {
        return 0;
    };
    let nodes = trace.nodes();
    let Some(first) = nodes
        .iter()
        .position(|n| n.status == NodeStatus::Failed && n.failure.is_some())
    else {
        return 0;
    };
    let mut failed_types: BTreeMap<&str, ()> = BTreeMap::new();
    for node in &nodes[first..] {
        if failed_types.contains_key(node.action.action_type()) && node.recovery_of.is_none() {
            return 0;
        }
        if node.status == NodeStatus::Failed {
            failed_types.insert(node.action.action_type(), ());
        }
    }
    1
}

/// Failure visibility for a run without a trace: 1 iff the run stopped on
/// the failure and its surfaced diagnostics name the failure type.
pub fn diagnostic_failure_visibility(run: &RunResult, failure_type: &str) -> u8 {
    u8::from(
        run.terminal == Terminal::UnrecoveredFailure && run.diagnostics.iter().any(|d| d.contains(failure_type)),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    pub workload: WorkloadConfig,
    /// Repeated runs per pipeline for the variance column.
    pub runs: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            workload: WorkloadConfig::default(),
            runs: DEFAULT_RUNS,
        }
    }
}

pub fn evaluate_pipeline(pipeline: Pipeline, cfg: &SuiteConfig, store: &ArtifactStore) -> Result<MetricsRow, MetricsError> {
    if cfg.runs < 2 {
        return Err(MetricsError::TooFewRuns(cfg.runs));
    }
    let clean = pipeline.run_spec(cfg.workload, false);
    let runs = batch::run_batch(&batch::repeated(&clean, cfg.runs), store)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let first = &runs[0];

    let replay = if pipeline.replays_by_rerun() {
        rerun_equality(&runs)
    } else {
        reproducibility_success(first, store)?
    };
    let trace = if first.trace.is_some() {
        trace_completeness(first.logged_count(), first.executed_count)?
    } else {
        0.0
    };

    let failing = batch::execute(&pipeline.run_spec(cfg.workload, true), store)?;
    let failure = match &failing.trace {
        Some(t) => failure_visibility(Some(t)),
        None => diagnostic_failure_visibility(&failing, INJECTED_FAULT),
    };

    Ok(MetricsRow {
        pipeline,
        replay: f64::from(replay),
        trace,
        failure: f64::from(failure),
        variance: f64::from(variance(&runs)?),
    })
}

pub fn run_experiment_suite(cfg: &SuiteConfig, store: &ArtifactStore) -> Result<Vec<MetricsRow>, MetricsError> {
    Pipeline::ALL
        .iter()
        .map(|&p| evaluate_pipeline(p, cfg, store))
        .collect()
}

pub fn render_table(rows: &[MetricsRow]) -> String {
    let mut out = format!("{:<18} {:>6} {:>6} {:>8} {:>9}\n", "Pipeline", "Replay", "Trace", "Failure", "Variance");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<18} {:>6.1} {:>6.1} {:>8.1} {:>9.1}",
            r.pipeline.label(),
            r.replay,
            r.trace,
            r.failure,
            r.variance
        );
    }
    out
}

#[derive(Serialize)]
struct Report<'a> {
    rows: &'a [MetricsRow],
    table: &'static str,
}

/// Canonical JSON of the metric rows.
pub fn report_bytes(rows: &[MetricsRow]) -> Vec<u8> {
    let mut bytes = canonical::to_canonical_bytes(&Report {
        rows,
        table: "execution_correctness",
    })
    .expect("metric values are finite");
    bytes.push(b'\n');
    bytes
}
