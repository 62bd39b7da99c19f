//! The execution engine: the deterministic mediator between a planner and
//! the adapters.
//!
//! Every proposed action passes through a fixed pipeline:
//!
//! 1. validate against the schema and the adapter registry
//! 2. check the action's declared preconditions
//! 3. resolve input references (symbolic, content, inline) to bytes
//! 4. dispatch to the adapter
//! 5. verify declared effects
//! 6. count the dispatch
//! 7. append the trace node (when provenance is enabled)
//!
//! An action rejected at steps 1–3 is never dispatched and never becomes a
//! node; the rejection itself is recorded. [`run_workflow`] wraps the
//! pipeline in the iteration-capped, failure-aware planner loop.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::action::{validate_action, Action, ArtifactRef, Predicate, SymbolicRef, ValidationReport};
use crate::adapter::{AdapterCall, AdapterFailure, AdapterRegistry};
use crate::canonical;
use crate::planner::{self, ActionProposal, FailureObservation, HistoryEntry, ObservableState, Planner};
use crate::store::{ArtifactStore, ContentHash, StoreError};
use crate::trace::{ExecutionTrace, FailureRecord, NodeStatus, RejectionEvent, TraceError, TraceNode};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// The recorded identity of the environment actions run under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentBinding {
    pub environment_id: String,
    pub engine_version: String,
    pub adapter_versions: BTreeMap<String, String>,
    pub seed_policy: BTreeMap<String, String>,
}

impl EnvironmentBinding {
    /// SHA-256 of the binding's canonical bytes.
    pub fn env_hash(&self) -> ContentHash {
        ContentHash::of(&self.canonical_bytes())
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(self).expect("binding is JSON-representable")
    }
}

/// Seed policy recorded in every binding: randomness reaches adapters only
/// through `metadata.seeds`.
pub fn default_seed_policy() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("prng".to_string(), "splitmix64".to_string()),
        ("source".to_string(), "action.metadata.seeds".to_string()),
    ])
}

/// Deterministic binding for a registry: equal registries, equal hashes.
pub fn environment_binding(registry: &AdapterRegistry, engine_version: &str) -> EnvironmentBinding {
    EnvironmentBinding {
        environment_id: "local".to_string(),
        engine_version: engine_version.to_string(),
        adapter_versions: registry.versions(),
        seed_policy: default_seed_policy(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionPolicy {
    pub provenance_enabled: bool,
    pub max_iterations: u32,
    /// Terminate on the first failure instead of entering the recovery loop.
    pub fail_fast: bool,
}

impl Default for ExecutionPolicy {
    fn default() -> Self {
        Self {
            provenance_enabled: true,
            max_iterations: 10,
            fail_fast: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Terminal {
    Done,
    IterationCapReached,
    UnrecoveredFailure,
}

impl fmt::Display for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Terminal::Done => "Done",
            Terminal::IterationCapReached => "IterationCapReached",
            Terminal::UnrecoveredFailure => "UnrecoveredFailure",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    /// Absent when provenance is disabled.
    pub trace: Option<ExecutionTrace>,
    pub final_outputs: BTreeMap<String, ContentHash>,
    /// Adapter dispatches in this run, counted independently of logging.
    pub executed_count: u64,
    pub iterations_used: u32,
    pub terminal: Terminal,
    /// Unstructured error text surfaced during the run, as a process would
    /// print it. Present whether or not provenance is enabled.
    pub diagnostics: Vec<String>,
}

impl RunResult {
    pub fn logged_count(&self) -> u64 {
        self.trace
            .as_ref()
            .map_or(0, |t| t.logged_execution_count() as u64)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error("action rejected: {0}")]
    Rejected(ValidationReport),
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
    #[error("cannot resolve {reference}: {reason}")]
    Resolution { reference: String, reason: String },
    #[error("invalid recovery target {0:?}: not a Failed node of this run")]
    InvalidRecoveryTarget(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("trace invariant violated: {0}")]
    Trace(#[from] TraceError),
}

impl ExecError {
    /// Category recorded in rejection events and failure observations.
    pub fn kind(&self) -> &'static str {
        match self {
            ExecError::Rejected(_) | ExecError::PreconditionFailed(_) => "ActionRejected",
            ExecError::Resolution { .. } => "ResolutionError",
            ExecError::InvalidRecoveryTarget(_) => "PlannerError",
            ExecError::Store(_) => "StoreError",
            ExecError::Trace(_) => "TraceError",
        }
    }

    /// Refusals happen before dispatch and are reported back to the planner;
    /// the rest are environment or engine faults that abort the run.
    pub fn is_refusal(&self) -> bool {
        matches!(
            self,
            ExecError::Rejected(_)
                | ExecError::PreconditionFailed(_)
                | ExecError::Resolution { .. }
                | ExecError::InvalidRecoveryTarget(_)
        )
    }
}

impl From<planner::ResolutionError> for ExecError {
    fn from(e: planner::ResolutionError) -> Self {
        ExecError::Resolution {
            reference: e.reference,
            reason: e.reason,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("adapters {0:?} draw unrecorded entropy and cannot run with provenance enabled")]
    NondeterministicAdapter(Vec<String>),
    #[error("max_iterations must be at least 1")]
    ZeroIterationCap,
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// Shared, immutable engine state: registry, store and environment binding.
#[derive(Debug, Clone)]
pub struct Engine {
    registry: Arc<AdapterRegistry>,
    store: ArtifactStore,
    binding: EnvironmentBinding,
}

impl Engine {
    pub fn new(registry: Arc<AdapterRegistry>, store: ArtifactStore) -> Self {
        let binding = environment_binding(&registry, ENGINE_VERSION);
        Self {
            registry,
            store,
            binding,
        }
    }

    pub fn with_binding(mut self, binding: EnvironmentBinding) -> Self {
        self.binding = binding;
        self
    }

    pub fn registry(&self) -> &AdapterRegistry {
        &self.registry
    }

    pub fn store(&self) -> &ArtifactStore {
        &self.store
    }

    pub fn binding(&self) -> &EnvironmentBinding {
        &self.binding
    }

    pub fn env_hash(&self) -> ContentHash {
        self.binding.env_hash()
    }

    /// Fresh per-run context.
    pub fn context(&self, trace_id: &str, policy: ExecutionPolicy) -> Result<EngineContext<'_>, EngineError> {
        self.context_from(ExecutionTrace::new(trace_id), policy)
    }

    /// Context continuing from an existing (possibly forked) trace prefix.
    pub fn context_from(
        &self,
        mut trace: ExecutionTrace,
        policy: ExecutionPolicy,
    ) -> Result<EngineContext<'_>, EngineError> {
        if policy.max_iterations == 0 {
            return Err(EngineError::ZeroIterationCap);
        }
        let unseeded = self.registry.nondeterministic_adapters();
        if policy.provenance_enabled && !unseeded.is_empty() {
            return Err(EngineError::NondeterministicAdapter(unseeded));
        }
        let env_hash = self.env_hash();
        let mut ctx = EngineContext {
            engine: self,
            policy,
            trace: None,
            outputs_by_node: BTreeMap::new(),
            history: Vec::new(),
            available: BTreeMap::new(),
            unrecovered: BTreeSet::new(),
            last_failure: None,
            executed_count: 0,
            clock: 0,
            next_ordinal: 0,
            diagnostics: Vec::new(),
        };
        for node in trace.nodes() {
            ctx.observe(node);
        }
        if policy.provenance_enabled {
            trace.bind_environment(self.binding.clone());
            debug_assert!(trace.environments().contains_key(&env_hash));
            ctx.trace = Some(trace);
        }
        Ok(ctx)
    }
}

/// Mutable state of a single run. One writer; never shared across threads.
#[derive(Debug)]
pub struct EngineContext<'e> {
    engine: &'e Engine,
    policy: ExecutionPolicy,
    trace: Option<ExecutionTrace>,
    /// Working memory of what each node produced. Mirrors the trace when
    /// provenance is on; it is the only record when provenance is off.
    outputs_by_node: BTreeMap<String, NodeOutputs>,
    history: Vec<HistoryEntry>,
    available: BTreeMap<String, (ContentHash, String)>,
    unrecovered: BTreeSet<String>,
    last_failure: Option<FailureObservation>,
    executed_count: u64,
    clock: u64,
    next_ordinal: u64,
    diagnostics: Vec<String>,
}

#[derive(Debug, Clone)]
struct NodeOutputs {
    status: NodeStatus,
    readable: BTreeMap<String, ContentHash>,
    recovery_of: Option<String>,
}

impl<'e> EngineContext<'e> {
    pub fn engine(&self) -> &'e Engine {
        self.engine
    }

    pub fn policy(&self) -> ExecutionPolicy {
        self.policy
    }

    pub fn trace(&self) -> Option<&ExecutionTrace> {
        self.trace.as_ref()
    }

    pub fn executed_count(&self) -> u64 {
        self.executed_count
    }

    /// Artifacts produced by successful (or replayed) nodes, by name.
    pub fn available_artifacts(&self) -> BTreeMap<String, ContentHash> {
        self.available
            .iter()
            .map(|(name, (hash, _))| (name.clone(), *hash))
            .collect()
    }

    pub fn diagnostics(&self) -> &[String] {
        &self.diagnostics
    }

    fn tick(&mut self) -> u64 {
        let t = self.clock;
        self.clock += 1;
        t
    }

    /// Incorporates a node (executed now or copied from a prefix) into the
    /// working state.
    fn observe(&mut self, node: &TraceNode) {
        self.clock = self.clock.max(node.finished_at + 1);
        self.next_ordinal = self.next_ordinal.max(ordinal_after(&node.node_id));
        let mut readable = node.outputs.clone();
        if let Some(failure) = &node.failure {
            readable.extend(failure.partial_outputs.clone());
        }
        self.outputs_by_node.insert(
            node.node_id.clone(),
            NodeOutputs {
                status: node.status,
                readable,
                recovery_of: node.recovery_of.clone(),
            },
        );
        self.history.push(HistoryEntry {
            node_id: node.node_id.clone(),
            action_type: node.action.action_type().to_string(),
            status: node.status,
            output_names: node.outputs.keys().cloned().collect(),
        });
        match node.status {
            NodeStatus::Failed => {
                self.unrecovered.insert(node.node_id.clone());
                self.last_failure = Some(FailureObservation {
                    node_id: Some(node.node_id.clone()),
                    action_type: node.action.action_type().to_string(),
                    record: node.failure.clone().expect("failed nodes carry a record"),
                });
            }
            NodeStatus::Success | NodeStatus::Replayed => {
                for (name, hash) in &node.outputs {
                    self.available.insert(name.clone(), (*hash, node.node_id.clone()));
                }
                let mut target = node.recovery_of.clone();
                while let Some(t) = target {
                    self.unrecovered.remove(&t);
                    target = self.outputs_by_node.get(&t).and_then(|o| o.recovery_of.clone());
                }
                if self.unrecovered.is_empty() {
                    self.last_failure = None;
                }
            }
        }
    }

    /// What the planner gets to see, per its observation mode.
    pub fn observable_state(&self, iteration: u32, observes_history: bool) -> ObservableState {
        if !observes_history {
            return ObservableState {
                iteration,
                ..ObservableState::default()
            };
        }
        ObservableState {
            iteration,
            history: self.history.clone(),
            last_failure: self.last_failure.clone(),
            available_artifacts: self.available_artifacts().into_iter().collect(),
        }
    }

    /// Allocates the next sequential action id (`a0`, `a1`, ...).
    fn next_id(&mut self) -> String {
        let id = format!("a{}", self.next_ordinal);
        self.next_ordinal += 1;
        id
    }

    /// Runs one action through the full pipeline. Returns the node that was
    /// (or, with provenance off, would have been) appended. Adapter failures
    /// come back as `Ok` with a Failed node.
    pub fn execute_action(&mut self, proposal: &Action, recovery_of: Option<&str>) -> Result<TraceNode, ExecError> {
        let engine = self.engine;
        let started_at = self.clock;
        let id = format!("a{}", self.next_ordinal);
        let action = proposal.reissued(&id, started_at, &engine.binding.environment_id);

        let report = validate_action(&action, &engine.registry);
        if !report.is_ok() {
            return Err(self.refuse(&action, ExecError::Rejected(report)));
        }
        if let Err(e) = self.check_preconditions(&action) {
            return Err(self.refuse(&action, e));
        }
        if let Some(target) = recovery_of {
            let ok = self
                .outputs_by_node
                .get(target)
                .is_some_and(|o| o.status == NodeStatus::Failed);
            if !ok {
                return Err(self.refuse(&action, ExecError::InvalidRecoveryTarget(target.to_string())));
            }
        }
        let (inputs, mut parents) = match self.resolve_inputs(&action) {
            Ok(resolved) => resolved,
            Err(e) => return Err(self.refuse(&action, e)),
        };
        if let Some(target) = recovery_of {
            if !parents.iter().any(|p| p == target) {
                parents.push(target.to_string());
            }
        }

        let call = AdapterCall {
            action: &action,
            inputs,
        };
        let outcome = engine.registry.dispatch(&call);
        let (status, outputs, failure) = match outcome {
            Ok(produced) => {
                let outputs = self.store_all(&produced)?;
                let missing: Vec<&str> = action
                    .effects()
                    .iter()
                    .map(|e| e.output())
                    .filter(|name| !outputs.contains_key(*name))
                    .collect();
                if missing.is_empty() {
                    (NodeStatus::Success, outputs, None)
                } else {
                    let record = FailureRecord {
                        failure_type: "EffectMismatch".to_string(),
                        error_context: format!("declared outputs not produced: {}", missing.join(", ")),
                        partial_outputs: outputs,
                    };
                    (NodeStatus::Failed, BTreeMap::new(), Some(record))
                }
            }
            Err(AdapterFailure {
                failure_type,
                message,
                partial_outputs,
            }) => {
                let record = FailureRecord {
                    failure_type,
                    error_context: message,
                    partial_outputs: self.store_all(&partial_outputs)?,
                };
                (NodeStatus::Failed, BTreeMap::new(), Some(record))
            }
        };
        self.executed_count += 1;
        self.next_id();
        self.tick();
        let finished_at = self.tick();

        if let Some(record) = &failure {
            self.diagnostics.push(format!(
                "{id} {} failed: {}: {}",
                action.action_type(),
                record.failure_type,
                record.error_context
            ));
        }
        let node = TraceNode {
            node_id: id,
            action,
            status,
            outputs,
            env_hash: engine.env_hash(),
            started_at,
            finished_at,
            parents,
            failure,
            recovery_of: recovery_of.map(str::to_string),
        };
        if let Some(trace) = self.trace.as_mut() {
            trace.append_node(node.clone())?;
        }
        self.observe(&node);
        Ok(node)
    }

    fn refuse(&mut self, action: &Action, error: ExecError) -> ExecError {
        let at = self.tick();
        let detail = error.to_string();
        self.diagnostics
            .push(format!("{} {}: {detail}", action.action_type(), error.kind()));
        if let Some(trace) = self.trace.as_mut() {
            trace.record_rejection(RejectionEvent {
                logical_timestamp: at,
                action_type: action.action_type().to_string(),
                kind: error.kind().to_string(),
                detail: detail.clone(),
            });
        }
        self.last_failure = Some(FailureObservation {
            node_id: None,
            action_type: action.action_type().to_string(),
            record: FailureRecord {
                failure_type: error.kind().to_string(),
                error_context: detail,
                partial_outputs: BTreeMap::new(),
            },
        });
        error
    }

    fn check_preconditions(&self, action: &Action) -> Result<(), ExecError> {
        for predicate in action.preconditions() {
            let holds = match predicate {
                Predicate::ArtifactExists(name) => self.available.contains_key(name),
                Predicate::ArtifactAbsent(name) => !self.available.contains_key(name),
                Predicate::ParamEquals(name, value) => action.parameter(name) == Some(value),
            };
            if !holds {
                return Err(ExecError::PreconditionFailed(format!("{predicate:?}")));
            }
        }
        Ok(())
    }

    /// Resolves each input to bytes and collects dependency edges.
    fn resolve_inputs(&self, action: &Action) -> Result<ResolvedInputs, ExecError> {
        let store = &self.engine.store;
        let mut inputs = BTreeMap::new();
        let mut parents: Vec<String> = Vec::new();
        for (name, source) in action.inputs() {
            let bytes = match source {
                ArtifactRef::Inline(value) => {
                    canonical::to_canonical_bytes(value).map_err(|e| ExecError::Resolution {
                        reference: name.clone(),
                        reason: e.to_string(),
                    })?
                }
                ArtifactRef::Content(hash) => {
                    if let Some(producer) = self.producer_of(hash) {
                        push_unique(&mut parents, producer);
                    }
                    store.get(hash).map_err(|e| ExecError::Resolution {
                        reference: hash.to_hex(),
                        reason: e.to_string(),
                    })?
                }
                ArtifactRef::Symbolic(text) => {
                    let reference = SymbolicRef::parse(text).map_err(|e| ExecError::Resolution {
                        reference: text.clone(),
                        reason: e.to_string(),
                    })?;
                    let hash = match self.trace.as_ref() {
                        Some(trace) => planner::resolve_reference(&reference, trace).map_err(ExecError::from),
                        None => self.resolve_from_memory(&reference),
                    }?;
                    push_unique(&mut parents, reference.node_id.clone());
                    store.get(&hash).map_err(|e| ExecError::Resolution {
                        reference: text.clone(),
                        reason: e.to_string(),
                    })?
                }
            };
            inputs.insert(name.clone(), bytes);
        }
        Ok((inputs, parents))
    }

    fn resolve_from_memory(&self, reference: &SymbolicRef) -> Result<ContentHash, ExecError> {
        let node = self
            .outputs_by_node
            .get(&reference.node_id)
            .ok_or_else(|| ExecError::Resolution {
                reference: reference.to_string(),
                reason: format!("unknown node {:?}", reference.node_id),
            })?;
        node.readable
            .get(&reference.output)
            .copied()
            .ok_or_else(|| ExecError::Resolution {
                reference: reference.to_string(),
                reason: format!("node {:?} has no output {:?}", reference.node_id, reference.output),
            })
    }

    fn producer_of(&self, hash: &ContentHash) -> Option<String> {
        self.history
            .iter()
            .rev()
            .find(|h| {
                self.outputs_by_node
                    .get(&h.node_id)
                    .is_some_and(|o| o.readable.values().any(|v| v == hash))
            })
            .map(|h| h.node_id.clone())
    }

    fn store_all(&self, payloads: &BTreeMap<String, Vec<u8>>) -> Result<BTreeMap<String, ContentHash>, StoreError> {
        payloads
            .iter()
            .map(|(name, bytes)| Ok((name.clone(), self.engine.store.put(bytes)?)))
            .collect()
    }

    /// Seals the run into a result.
    pub fn finish(self, terminal: Terminal, iterations_used: u32) -> RunResult {
        RunResult {
            trace: self.trace,
            final_outputs: self
                .available
                .into_iter()
                .map(|(name, (hash, _))| (name, hash))
                .collect(),
            executed_count: self.executed_count,
            iterations_used,
            terminal,
            diagnostics: self.diagnostics,
        }
    }

    fn record_planner_error(&mut self, detail: &str) {
        self.diagnostics.push(format!("PlannerError: {detail}"));
        let at = self.tick();
        if let Some(trace) = self.trace.as_mut() {
            trace.record_rejection(RejectionEvent {
                logical_timestamp: at,
                action_type: String::new(),
                kind: "PlannerError".to_string(),
                detail: detail.to_string(),
            });
        }
        self.last_failure = Some(FailureObservation {
            node_id: None,
            action_type: String::new(),
            record: FailureRecord {
                failure_type: "PlannerError".to_string(),
                error_context: detail.to_string(),
                partial_outputs: BTreeMap::new(),
            },
        });
    }

    fn has_unrecovered_failure(&self) -> bool {
        !self.unrecovered.is_empty()
    }
}

fn push_unique(parents: &mut Vec<String>, id: String) {
    if !parents.contains(&id) {
        parents.push(id);
    }
}

/// Input bytes by name, plus the nodes they were read from.
type ResolvedInputs = (BTreeMap<String, Vec<u8>>, Vec<String>);

/// Ordinal following a sequential id such as `a7` (0 for other shapes).
fn ordinal_after(node_id: &str) -> u64 {
    node_id
        .strip_prefix('a')
        .and_then(|n| n.parse::<u64>().ok())
        .map_or(0, |n| n + 1)
}

/// The failure-aware planner loop.
///
/// Each iteration asks the planner for a proposal; `Done` ends the run, an
/// action is executed through the pipeline. Refused proposals and adapter
/// failures are fed back to the planner through the next observable state
/// (unless `fail_fast`). The cap bounds executed iterations; once reached the
/// planner is asked one final time whether it is done.
pub fn run_workflow(planner: &dyn Planner, ctx: EngineContext<'_>) -> Result<RunResult, EngineError> {
    resume_workflow(planner, ctx, 0)
}

/// [`run_workflow`] for a context that already consumed `iterations_used`
/// iterations (a fork continuing after its divergence node).
pub fn resume_workflow(
    planner: &dyn Planner,
    mut ctx: EngineContext<'_>,
    iterations_used: u32,
) -> Result<RunResult, EngineError> {
    let policy = ctx.policy;
    let observes = planner.observes_history();
    let mut iterations = iterations_used;
    loop {
        let state = ctx.observable_state(iterations, observes);
        let proposal = match planner.propose(&state) {
            Ok(p) => Some(p),
            Err(e) => {
                ctx.record_planner_error(&e.to_string());
                None
            }
        };
        let at_cap = iterations >= policy.max_iterations;
        match proposal {
            Some(ActionProposal::Done) => {
                let terminal = if ctx.has_unrecovered_failure() {
                    Terminal::UnrecoveredFailure
                } else {
                    Terminal::Done
                };
                return Ok(ctx.finish(terminal, iterations));
            }
            None if policy.fail_fast => return Ok(ctx.finish(Terminal::UnrecoveredFailure, iterations)),
            _ if at_cap => {
                let terminal = if ctx.has_unrecovered_failure() {
                    Terminal::UnrecoveredFailure
                } else {
                    Terminal::IterationCapReached
                };
                return Ok(ctx.finish(terminal, iterations));
            }
            None => iterations += 1,
            Some(ActionProposal::Propose { action, recovery_target }) => {
                iterations += 1;
                let failed = match ctx.execute_action(&action, recovery_target.as_deref()) {
                    Ok(node) => node.status == NodeStatus::Failed,
                    Err(e) if e.is_refusal() => true,
                    Err(e) => return Err(e.into()),
                };
                if failed && policy.fail_fast {
                    return Ok(ctx.finish(Terminal::UnrecoveredFailure, iterations));
                }
            }
        }
    }
}
