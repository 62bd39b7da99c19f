//! Run configuration record. Field names match the keys documented in
//! `docs/run-config.md`; parsing from a file is left to the caller.

use serde::{Deserialize, Serialize};

use crate::batch::RunSpec;
use crate::engine::ExecutionPolicy;
use crate::planner::PlannerMode;
use crate::workload::{TrainerVariant, WorkloadConfig};

pub const SYNTHETIC_WORKLOAD: &str = "synthetic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub workload: String,
    pub seed: u64,
    pub n_rows: u64,
    pub learning_rate: f64,
    pub iterations: u64,
    pub planner: PlannerMode,
    pub provenance: bool,
    /// Stage to inject a failure into; only `"train"` is supported.
    pub inject_failure: Option<String>,
    pub max_iterations: u32,
    pub fail_fast: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let w = WorkloadConfig::default();
        let p = ExecutionPolicy::default();
        Self {
            workload: SYNTHETIC_WORKLOAD.to_string(),
            seed: w.seed,
            n_rows: w.n_rows,
            learning_rate: w.learning_rate,
            iterations: w.iterations,
            planner: PlannerMode::HistoryFed,
            provenance: p.provenance_enabled,
            inject_failure: None,
            max_iterations: p.max_iterations,
            fail_fast: p.fail_fast,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown workload {0:?} (only \"synthetic\" is available)")]
    UnknownWorkload(String),
    #[error("failure injection is supported for stage \"train\" only, not {0:?}")]
    UnsupportedInjection(String),
    #[error("max_iterations must be at least 1")]
    ZeroIterationCap,
    #[error("learning_rate must be finite")]
    NonFiniteLearningRate,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workload != SYNTHETIC_WORKLOAD {
            return Err(ConfigError::UnknownWorkload(self.workload.clone()));
        }
        if let Some(stage) = &self.inject_failure {
            if stage != "train" {
                return Err(ConfigError::UnsupportedInjection(stage.clone()));
            }
        }
        if self.max_iterations == 0 {
            return Err(ConfigError::ZeroIterationCap);
        }
        if !self.learning_rate.is_finite() {
            return Err(ConfigError::NonFiniteLearningRate);
        }
        Ok(())
    }

    pub fn workload_config(&self) -> WorkloadConfig {
        WorkloadConfig {
            seed: self.seed,
            n_rows: self.n_rows,
            learning_rate: self.learning_rate,
            iterations: self.iterations,
        }
    }

    pub fn policy(&self) -> ExecutionPolicy {
        ExecutionPolicy {
            provenance_enabled: self.provenance,
            max_iterations: self.max_iterations,
            fail_fast: self.fail_fast,
        }
    }

    /// Deterministic trace id derived from the configuration.
    pub fn trace_id(&self) -> String {
        let fault = if self.inject_failure.is_some() { "-fault" } else { "" };
        format!("run-{}-seed{}{fault}", self.planner.as_str(), self.seed)
    }

    pub fn to_run_spec(&self) -> Result<RunSpec, ConfigError> {
        self.validate()?;
        Ok(RunSpec {
            trace_id: self.trace_id(),
            planner: self.planner,
            trainer: if self.inject_failure.is_some() {
                TrainerVariant::FaultInjection
            } else {
                TrainerVariant::Standard
            },
            policy: self.policy(),
            workload: self.workload_config(),
        })
    }
}
