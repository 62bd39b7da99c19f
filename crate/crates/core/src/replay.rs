//! Replay and fork, operating on the trace and the artifact store alone.
//!
//! Replay walks the trace in topological order and reads every logged output
//! back from the store; no adapter is ever invoked. Fork copies the trace
//! prefix before a divergence node into a new trace (as `Replayed` nodes),
//! re-issues the divergence action with modified parameters, and resumes the
//! planner loop. The source trace is only ever borrowed.

use std::collections::BTreeMap;

use crate::action::Value;
use crate::canonical;
use crate::engine::{self, Engine, EngineError, ExecutionPolicy, RunResult};
use crate::planner::Planner;
use crate::store::{ArtifactStore, ContentHash, StoreError};
use crate::trace::{ExecutionTrace, ForkOrigin, NodeStatus, TraceError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayResult {
    /// node id → output name → hash, including partial outputs of failed nodes.
    pub outputs: BTreeMap<String, BTreeMap<String, ContentHash>>,
    /// Bytes read back for every replayed hash.
    pub payloads: BTreeMap<ContentHash, Vec<u8>>,
    /// Nodes visited, in topological order.
    pub order: Vec<String>,
    /// Adapter dispatches performed by the replay.
    pub dispatch_count: u64,
    /// Set by [`ReplayResult::verify`].
    pub identical: bool,
}

impl ReplayResult {
    /// Runs [`verify_replay`] and records the outcome.
    pub fn verify(&mut self, original: &ExecutionTrace, reference: &ArtifactStore) -> u8 {
        let bit = verify_replay(original, self, reference);
        self.identical = bit == 1;
        bit
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    /// The trace references an artifact the store lacks.
    #[error("node {node:?} output {output:?}: artifact {hash} missing from store")]
    MissingArtifact {
        node: String,
        output: String,
        hash: ContentHash,
    },
    #[error(transparent)]
    Store(StoreError),
}

pub fn replay(trace: &ExecutionTrace, store: &ArtifactStore) -> Result<ReplayResult, ReplayError> {
    let mut result = ReplayResult {
        outputs: BTreeMap::new(),
        payloads: BTreeMap::new(),
        order: trace.topo_order(),
        dispatch_count: 0,
        identical: false,
    };
    for id in &result.order {
        let node = trace.node(id).expect("topo order lists trace nodes");
        let mut outputs = node.outputs.clone();
        if let Some(failure) = &node.failure {
            outputs.extend(failure.partial_outputs.clone());
        }
        for (name, hash) in &outputs {
            if result.payloads.contains_key(hash) {
                continue;
            }
            let bytes = store.get(hash).map_err(|e| match e {
                StoreError::NotFound(hash) => ReplayError::MissingArtifact {
                    node: id.clone(),
                    output: name.clone(),
                    hash,
                },
                other => ReplayError::Store(other),
            })?;
            result.payloads.insert(*hash, bytes);
        }
        result.outputs.insert(id.clone(), outputs);
    }
    Ok(result)
}

/// 1 iff the replay dispatched nothing, covers exactly the original's logged
/// outputs, and every replayed payload is byte-equal to the original artifact
/// in `reference` (and re-hashes to its logged digest). 0 otherwise.
pub fn verify_replay(original: &ExecutionTrace, result: &ReplayResult, reference: &ArtifactStore) -> u8 {
    if result.dispatch_count != 0 || result.outputs.len() != original.len() {
        return 0;
    }
    for node in original.nodes() {
        let mut expected = node.outputs.clone();
        if let Some(failure) = &node.failure {
            expected.extend(failure.partial_outputs.clone());
        }
        if result.outputs.get(&node.node_id) != Some(&expected) {
            return 0;
        }
        for hash in expected.values() {
            let Some(replayed) = result.payloads.get(hash) else {
                return 0;
            };
            let Ok(original_bytes) = reference.get(hash) else {
                return 0;
            };
            if *replayed != original_bytes || ContentHash::of(replayed) != *hash {
                return 0;
            }
        }
    }
    1
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForkSpec {
    pub source_trace: String,
    pub at_node: String,
    /// Parameter overrides for the action at `at_node`. Keys may be
    /// qualified as `<node_id>.<param>`; any qualifier other than `at_node`
    /// is refused.
    pub modifications: BTreeMap<String, Value>,
}

impl ForkSpec {
    /// Deterministic id for the forked trace.
    pub fn fork_trace_id(&self) -> String {
        let digest = ContentHash::of(
            &canonical::to_canonical_bytes(&self.modifications).expect("values are JSON-representable"),
        );
        format!("{}~fork-{}-{}", self.source_trace, self.at_node, &digest.to_hex()[..8])
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ForkError {
    #[error("fork spec names trace {spec:?} but source is {actual:?}")]
    SourceMismatch { spec: String, actual: String },
    #[error("node {0:?} not found in source trace")]
    UnknownNode(String),
    #[error("fork requires at least one parameter modification")]
    EmptyModifications,
    #[error("modification {key:?} targets prefix node {node:?}; only {at:?} may be modified")]
    ModifiedPrefixNode { key: String, node: String, at: String },
    #[error("action at {node:?} has no parameter {param:?}")]
    UnknownParameter { node: String, param: String },
    #[error("forking requires provenance to be enabled")]
    ProvenanceDisabled,
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Branches `source` at `spec.at_node`. The returned run's trace holds the
/// copied prefix, the re-executed divergence node and whatever the planner
/// ran afterwards.
pub fn fork(
    spec: &ForkSpec,
    source: &ExecutionTrace,
    engine: &Engine,
    planner: &dyn Planner,
    policy: ExecutionPolicy,
) -> Result<RunResult, ForkError> {
    if spec.source_trace != source.trace_id() {
        return Err(ForkError::SourceMismatch {
            spec: spec.source_trace.clone(),
            actual: source.trace_id().to_string(),
        });
    }
    let at = source
        .position(&spec.at_node)
        .ok_or_else(|| ForkError::UnknownNode(spec.at_node.clone()))?;
    if spec.modifications.is_empty() {
        return Err(ForkError::EmptyModifications);
    }
    if !policy.provenance_enabled {
        return Err(ForkError::ProvenanceDisabled);
    }
    let divergence = &source.nodes()[at];
    let mut overrides = BTreeMap::new();
    for (key, value) in &spec.modifications {
        let param = match key.split_once('.') {
            Some((node, _)) if node != spec.at_node => {
                if source.node(node).is_some() {
                    return Err(ForkError::ModifiedPrefixNode {
                        key: key.clone(),
                        node: node.to_string(),
                        at: spec.at_node.clone(),
                    });
                }
                return Err(ForkError::UnknownNode(node.to_string()));
            }
            Some((_, param)) => param,
            None => key.as_str(),
        };
        if divergence.action.parameter(param).is_none() {
            return Err(ForkError::UnknownParameter {
                node: spec.at_node.clone(),
                param: param.to_string(),
            });
        }
        overrides.insert(param.to_string(), value.clone());
    }

    let mut branch = ExecutionTrace::forked(
        spec.fork_trace_id(),
        ForkOrigin {
            parent_trace: source.trace_id().to_string(),
            divergence_node: spec.at_node.clone(),
        },
    );
    let store = engine.store();
    for node in &source.nodes()[..at] {
        let mut copy = node.clone();
        if copy.status == NodeStatus::Success {
            copy.status = NodeStatus::Replayed;
        }
        let readable = copy
            .outputs
            .iter()
            .chain(copy.failure.iter().flat_map(|f| f.partial_outputs.iter()));
        for (name, hash) in readable {
            if !store.contains(hash) {
                return Err(ReplayError::MissingArtifact {
                    node: copy.node_id.clone(),
                    output: name.clone(),
                    hash: *hash,
                }
                .into());
            }
        }
        if let Some(binding) = source.environments().get(&copy.env_hash) {
            branch.bind_environment(binding.clone());
        }
        branch.append_node(copy)?;
    }

    let mut ctx = engine.context_from(branch, policy)?;
    let action = divergence.action.with_parameters(&overrides);
    let recovery_of = divergence
        .recovery_of
        .as_deref()
        .filter(|target| source.position(target).is_some_and(|p| p < at));
    match ctx.execute_action(&action, recovery_of) {
        Ok(_) => {}
        Err(e) if e.is_refusal() => {}
        Err(e) => return Err(EngineError::from(e).into()),
    }
    Ok(engine::resume_workflow(planner, ctx, at as u32 + 1)?)
}
