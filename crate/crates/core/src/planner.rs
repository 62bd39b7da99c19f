//! Planner contract and the shipped planners.
//!
//! A planner only proposes; the engine decides. Three deterministic planners
//! cover the evaluated pipelines:
//!
//! - [`ScriptedPlanner`]: a fixed proposal list indexed by iteration.
//! - [`HistoryFreePlanner`]: the workload plan indexed by iteration, with no
//!   view of what already ran.
//! - [`HistoryFedPlanner`]: decides from the action history and available
//!   artifacts, signals DONE once every required artifact exists, and targets
//!   the most recent failure with a recovery attempt.
//!
//! [`RemotePlanner`] adapts any text-completion client to the same contract.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::action::{Action, ArtifactRef, SymbolicRef};
use crate::canonical;
use crate::store::ContentHash;
use crate::trace::{ExecutionTrace, FailureRecord, NodeStatus};
use crate::workload::{self, WorkloadConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub node_id: String,
    pub action_type: String,
    pub status: NodeStatus,
    pub output_names: Vec<String>,
}

/// The most recent unrecovered failure. `node_id` is `None` when the failure
/// was a refused proposal rather than a failed node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureObservation {
    pub node_id: Option<String>,
    pub action_type: String,
    pub record: FailureRecord,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservableState {
    /// Executed iterations so far in this run.
    pub iteration: u32,
    /// Trace append order; empty for planners that do not observe history.
    pub history: Vec<HistoryEntry>,
    pub last_failure: Option<FailureObservation>,
    pub available_artifacts: Vec<(String, ContentHash)>,
}

impl ObservableState {
    pub fn has_artifact(&self, name: &str) -> bool {
        self.available_artifacts.iter().any(|(n, _)| n == name)
    }

    /// Latest successful (or replayed) node exposing `output`.
    pub fn producer_of(&self, output: &str) -> Option<&str> {
        self.history
            .iter()
            .rev()
            .find(|h| h.status != NodeStatus::Failed && h.output_names.iter().any(|o| o == output))
            .map(|h| h.node_id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum ActionProposal {
    Done,
    Propose {
        action: Action,
        /// Failed node this proposal is a recovery attempt for.
        recovery_target: Option<String>,
    },
}

impl ActionProposal {
    pub fn action(action: Action) -> Self {
        ActionProposal::Propose {
            action,
            recovery_target: None,
        }
    }

    pub fn is_done(&self) -> bool {
        matches!(self, ActionProposal::Done)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlannerError {
    #[error("planner state inconsistent: {0}")]
    Inconsistent(String),
    #[error("malformed proposal: {0}")]
    Malformed(String),
    #[error("completion backend failed: {0}")]
    Backend(String),
}

pub trait Planner: Send + Sync {
    fn name(&self) -> &str;

    /// Whether the engine should expose history, failures and artifacts.
    fn observes_history(&self) -> bool;

    fn propose(&self, state: &ObservableState) -> Result<ActionProposal, PlannerError>;
}

/// Planner selection as it appears in run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerMode {
    Scripted,
    HistoryFree,
    HistoryFed,
}

impl PlannerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PlannerMode::Scripted => "scripted",
            PlannerMode::HistoryFree => "history_free",
            PlannerMode::HistoryFed => "history_fed",
        }
    }

    pub fn build(self, cfg: WorkloadConfig) -> Box<dyn Planner> {
        match self {
            PlannerMode::Scripted => Box::new(ScriptedPlanner::workload(cfg)),
            PlannerMode::HistoryFree => Box::new(HistoryFreePlanner::new(cfg)),
            PlannerMode::HistoryFed => Box::new(HistoryFedPlanner::new(cfg)),
        }
    }
}

impl std::str::FromStr for PlannerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scripted" => Ok(PlannerMode::Scripted),
            "history_free" => Ok(PlannerMode::HistoryFree),
            "history_fed" => Ok(PlannerMode::HistoryFed),
            other => Err(format!(
                "unknown planner {other:?} (expected scripted, history_free or history_fed)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot resolve {reference}: {reason}")]
pub struct ResolutionError {
    pub reference: String,
    pub reason: String,
}

/// Looks up `@node:<id>/output:<name>` in a trace. Partial outputs of failed
/// nodes are resolvable.
pub fn resolve_reference(reference: &SymbolicRef, trace: &ExecutionTrace) -> Result<ContentHash, ResolutionError> {
    let node = trace.node(&reference.node_id).ok_or_else(|| ResolutionError {
        reference: reference.to_string(),
        reason: format!("unknown node {:?}", reference.node_id),
    })?;
    node.readable_output(&reference.output)
        .copied()
        .ok_or_else(|| ResolutionError {
            reference: reference.to_string(),
            reason: format!("node {:?} has no output {:?}", reference.node_id, reference.output),
        })
}

/// Replays a fixed list of proposals, one per iteration, then DONE.
#[derive(Debug, Clone)]
pub struct ScriptedPlanner {
    name: String,
    script: Vec<ActionProposal>,
}

impl ScriptedPlanner {
    pub fn new(name: impl Into<String>, script: Vec<ActionProposal>) -> Self {
        Self {
            name: name.into(),
            script,
        }
    }

    /// The five workload stages in order, wired by positional node ids.
    pub fn workload(cfg: WorkloadConfig) -> Self {
        let script = (0..workload::STAGES.len())
            .map(|i| ActionProposal::action(positional_stage_action(&cfg, i, "scripted")))
            .collect();
        Self::new("scripted", script)
    }
}

impl Planner for ScriptedPlanner {
    fn name(&self) -> &str {
        &self.name
    }

    fn observes_history(&self) -> bool {
        false
    }

    fn propose(&self, state: &ObservableState) -> Result<ActionProposal, PlannerError> {
        Ok(self
            .script
            .get(state.iteration as usize)
            .cloned()
            .unwrap_or(ActionProposal::Done))
    }
}

/// Proposes the k-th workload stage at iteration k, whatever has already
/// happened. Restarted over existing state it re-proposes completed work.
#[derive(Debug, Clone)]
pub struct HistoryFreePlanner {
    cfg: WorkloadConfig,
}

impl HistoryFreePlanner {
    pub fn new(cfg: WorkloadConfig) -> Self {
        Self { cfg }
    }
}

impl Planner for HistoryFreePlanner {
    fn name(&self) -> &str {
        "history_free"
    }

    fn observes_history(&self) -> bool {
        false
    }

    fn propose(&self, state: &ObservableState) -> Result<ActionProposal, PlannerError> {
        let k = state.iteration as usize;
        if k >= workload::STAGES.len() {
            return Ok(ActionProposal::Done);
        }
        Ok(ActionProposal::action(positional_stage_action(&self.cfg, k, self.name())))
    }
}

/// Stage action whose inputs point at the node ids a clean sequential run
/// would assign (`a0` for stage 0, ...).
fn positional_stage_action(cfg: &WorkloadConfig, index: usize, planner: &str) -> Action {
    let stage = &workload::STAGES[index];
    let inputs = stage
        .inputs
        .iter()
        .map(|(input, artifact)| {
            let producer = workload::stage_index_for_output(artifact).expect("plan is closed");
            (input.to_string(), ArtifactRef::node_output(&format!("a{producer}"), artifact))
        })
        .collect();
    workload::stage_action(cfg, index, inputs, planner)
}

/// Plans from observed history: next missing artifact first, recovery when
/// the latest failure is unresolved, DONE when every required artifact exists.
#[derive(Debug, Clone)]
pub struct HistoryFedPlanner {
    cfg: WorkloadConfig,
}

impl HistoryFedPlanner {
    pub fn new(cfg: WorkloadConfig) -> Self {
        Self { cfg }
    }

    fn stage_with_history(&self, index: usize, state: &ObservableState) -> Result<Action, PlannerError> {
        let stage = &workload::STAGES[index];
        let mut inputs = BTreeMap::new();
        for (input, artifact) in stage.inputs {
            let producer = state.producer_of(artifact).ok_or_else(|| {
                PlannerError::Inconsistent(format!("artifact {artifact:?} available but no producer in history"))
            })?;
            inputs.insert(input.to_string(), ArtifactRef::node_output(producer, artifact));
        }
        Ok(workload::stage_action(&self.cfg, index, inputs, self.name()))
    }
}

impl Planner for HistoryFedPlanner {
    fn name(&self) -> &str {
        "history_fed"
    }

    fn observes_history(&self) -> bool {
        true
    }

    fn propose(&self, state: &ObservableState) -> Result<ActionProposal, PlannerError> {
        if let Some(FailureObservation {
            node_id: Some(failed),
            action_type,
            record,
        }) = &state.last_failure
        {
            if let Some(index) = workload::stage_index_for_type(action_type) {
                let mut action = self.stage_with_history(index, state)?;
                if record.partial_outputs.contains_key(workload::CHECKPOINT) {
                    let mut inputs = action.inputs().clone();
                    inputs.insert(
                        workload::WARM_START.to_string(),
                        ArtifactRef::node_output(failed, workload::CHECKPOINT),
                    );
                    action = workload::stage_action(&self.cfg, index, inputs, self.name());
                }
                return Ok(ActionProposal::Propose {
                    action,
                    recovery_target: Some(failed.clone()),
                });
            }
        }
        let next = workload::STAGES
            .iter()
            .position(|stage| !state.has_artifact(stage.output));
        match next {
            None => Ok(ActionProposal::Done),
            Some(index) => Ok(ActionProposal::action(self.stage_with_history(index, state)?)),
        }
    }
}

/// Text-completion backend for [`RemotePlanner`].
pub trait CompletionClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, String>;
}

/// Wire form of a remote proposal.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RemoteProposal {
    action: Action,
    #[serde(default)]
    recovery_target: Option<String>,
}

/// Delegates planning to a completion endpoint. The prompt carries the
/// canonical observable state; the reply must be `DONE` or a JSON object
/// `{"action": <action>, "recovery_target": <node id or null>}`. Admission is
/// left entirely to the engine's validation.
pub struct RemotePlanner<C> {
    client: C,
    instructions: String,
}

impl<C: CompletionClient> RemotePlanner<C> {
    pub fn new(client: C) -> Self {
        Self {
            client,
            instructions: format!(
                "Propose the next action for the workflow. Valid action types: {}. \
                 Reply DONE when the artifacts {} are all available.",
                workload::STAGES.iter().map(|s| s.action_type).collect::<Vec<_>>().join(", "),
                workload::REQUIRED_ARTIFACTS.join(", ")
            ),
        }
    }

    pub fn prompt(&self, state: &ObservableState) -> String {
        let state = canonical::to_canonical_bytes(state).expect("state is JSON-representable");
        format!("{}\nSTATE {}\n", self.instructions, String::from_utf8_lossy(&state))
    }
}

impl<C: CompletionClient> Planner for RemotePlanner<C> {
    fn name(&self) -> &str {
        "remote"
    }

    fn observes_history(&self) -> bool {
        true
    }

    fn propose(&self, state: &ObservableState) -> Result<ActionProposal, PlannerError> {
        let reply = self
            .client
            .complete(&self.prompt(state))
            .map_err(PlannerError::Backend)?;
        let reply = reply.trim();
        if reply == "DONE" {
            return Ok(ActionProposal::Done);
        }
        let parsed: RemoteProposal =
            serde_json::from_str(reply).map_err(|e| PlannerError::Malformed(e.to_string()))?;
        Ok(ActionProposal::Propose {
            action: parsed.action,
            recovery_target: parsed.recovery_target,
        })
    }
}
