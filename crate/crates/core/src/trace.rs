//! Append-only execution trace DAG and its line-oriented file format.
//!
//! A trace file is UTF-8 text. Line 1 is the header record; every following
//! line is one record, either a node or a rejected proposal, each in
//! canonical form and terminated by `\n`. See `docs/trace-format.md`.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::cmp::Reverse;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::action::Action;
use crate::canonical;
use crate::engine::EnvironmentBinding;
use crate::store::{ArtifactStore, ContentHash};

pub const TRACE_FORMAT: &str = "rlam-trace";
pub const TRACE_FORMAT_VERSION: u32 = 1;
pub const TRACE_FILE_EXTENSION: &str = "rlam-trace";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Success,
    Failed,
    /// Copied into a fork from its source trace without execution.
    Replayed,
}

impl fmt::Display for NodeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeStatus::Success => "Success",
            NodeStatus::Failed => "Failed",
            NodeStatus::Replayed => "Replayed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureRecord {
    pub failure_type: String,
    pub error_context: String,
    pub partial_outputs: BTreeMap<String, ContentHash>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceNode {
    pub node_id: String,
    pub action: Action,
    pub status: NodeStatus,
    pub outputs: BTreeMap<String, ContentHash>,
    pub env_hash: ContentHash,
    pub started_at: u64,
    pub finished_at: u64,
    pub parents: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery_of: Option<String>,
}

impl TraceNode {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(self).expect("trace nodes are JSON-representable")
    }

    /// Names of the top-level fields this node serializes.
    pub fn metadata_fields(&self) -> Vec<String> {
        match serde_json::to_value(self) {
            Ok(Json::Object(map)) => map.keys().cloned().collect(),
            _ => Vec::new(),
        }
    }

    /// Outputs readable by downstream references: logged outputs, or the
    /// partial outputs a failed node managed to emit.
    pub fn readable_output(&self, name: &str) -> Option<&ContentHash> {
        self.outputs.get(name).or_else(|| {
            self.failure
                .as_ref()
                .and_then(|f| f.partial_outputs.get(name))
        })
    }
}

/// Where a forked trace branched from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForkOrigin {
    pub parent_trace: String,
    pub divergence_node: String,
}

/// A proposal the engine refused before dispatch. Not an executed action, so
/// never a node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RejectionEvent {
    pub logical_timestamp: u64,
    pub action_type: String,
    pub kind: String,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Entry {
    Node,
    Rejection,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TraceError {
    #[error("node {node:?} references unknown parent {parent:?}")]
    DanglingParent { node: String, parent: String },
    #[error("node id {0:?} already present in trace")]
    DuplicateNodeId(String),
    #[error("node {0:?}: status Failed must coincide with a failure record")]
    InconsistentFailure(String),
    #[error("node {node:?}: recovery_of {target:?} is not an earlier Failed node")]
    InvalidRecovery { node: String, target: String },
    #[error("node {node:?}: environment {env} is not bound in the trace header")]
    UnknownEnvironment { node: String, env: ContentHash },
    #[error("node {0:?}: failure_type must be non-empty")]
    EmptyFailureType(String),
    #[error("parse error at line {line}, column {column} (byte offset {offset}): {message}")]
    Parse {
        line: usize,
        column: usize,
        offset: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    trace_id: String,
    fork_of: Option<ForkOrigin>,
    environments: BTreeMap<ContentHash, EnvironmentBinding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RejectionRecord {
    rejected: RejectionEvent,
}

/// The append-only record of one execution.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionTrace {
    trace_id: String,
    fork_of: Option<ForkOrigin>,
    environments: BTreeMap<ContentHash, EnvironmentBinding>,
    nodes: Vec<TraceNode>,
    rejections: Vec<RejectionEvent>,
    layout: Vec<Entry>,
    index: BTreeMap<String, usize>,
}

impl ExecutionTrace {
    pub fn new(trace_id: impl Into<String>) -> Self {
        Self {
            trace_id: trace_id.into(),
            fork_of: None,
            environments: BTreeMap::new(),
            nodes: Vec::new(),
            rejections: Vec::new(),
            layout: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn forked(trace_id: impl Into<String>, origin: ForkOrigin) -> Self {
        let mut trace = Self::new(trace_id);
        trace.fork_of = Some(origin);
        trace
    }

    pub fn trace_id(&self) -> &str {
        &self.trace_id
    }

    pub fn fork_of(&self) -> Option<&ForkOrigin> {
        self.fork_of.as_ref()
    }

    pub fn nodes(&self) -> &[TraceNode] {
        &self.nodes
    }

    pub fn rejections(&self) -> &[RejectionEvent] {
        &self.rejections
    }

    pub fn environments(&self) -> &BTreeMap<ContentHash, EnvironmentBinding> {
        &self.environments
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, node_id: &str) -> Option<&TraceNode> {
        self.index.get(node_id).map(|&i| &self.nodes[i])
    }

    /// Append position of a node.
    pub fn position(&self, node_id: &str) -> Option<usize> {
        self.index.get(node_id).copied()
    }

    /// Nodes executed in this trace (Success or Failed), excluding fork copies.
    pub fn logged_execution_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.status != NodeStatus::Replayed)
            .count()
    }

    /// Records the binding a node will reference. Re-binding the same hash is
    /// a no-op.
    pub fn bind_environment(&mut self, binding: EnvironmentBinding) -> ContentHash {
        let hash = binding.env_hash();
        self.environments.entry(hash).or_insert(binding);
        hash
    }

    pub fn append_node(&mut self, node: TraceNode) -> Result<String, TraceError> {
        self.check_node(&node)?;
        let id = node.node_id.clone();
        self.index.insert(id.clone(), self.nodes.len());
        self.nodes.push(node);
        self.layout.push(Entry::Node);
        Ok(id)
    }

    pub fn record_rejection(&mut self, event: RejectionEvent) {
        self.rejections.push(event);
        self.layout.push(Entry::Rejection);
    }

    fn check_node(&self, node: &TraceNode) -> Result<(), TraceError> {
        let id = &node.node_id;
        if self.index.contains_key(id) {
            return Err(TraceError::DuplicateNodeId(id.clone()));
        }
        for parent in &node.parents {
            if !self.index.contains_key(parent) {
                return Err(TraceError::DanglingParent {
                    node: id.clone(),
                    parent: parent.clone(),
                });
            }
        }
        if (node.status == NodeStatus::Failed) != node.failure.is_some() {
            return Err(TraceError::InconsistentFailure(id.clone()));
        }
        if node.failure.as_ref().is_some_and(|f| f.failure_type.is_empty()) {
            return Err(TraceError::EmptyFailureType(id.clone()));
        }
        if let Some(target) = &node.recovery_of {
            let valid = self
                .node(target)
                .is_some_and(|t| t.status == NodeStatus::Failed);
            if !valid {
                return Err(TraceError::InvalidRecovery {
                    node: id.clone(),
                    target: target.clone(),
                });
            }
        }
        if !self.environments.contains_key(&node.env_hash) {
            return Err(TraceError::UnknownEnvironment {
                node: id.clone(),
                env: node.env_hash,
            });
        }
        Ok(())
    }

    /// Node ids ordered so every node follows its parents; ties go to the
    /// earlier append position.
    pub fn topo_order(&self) -> Vec<String> {
        topo_order(self)
    }

    /// Every content hash the trace references.
    pub fn referenced_hashes(&self) -> BTreeSet<ContentHash> {
        let mut hashes = BTreeSet::new();
        for node in &self.nodes {
            hashes.extend(node.outputs.values().copied());
            if let Some(failure) = &node.failure {
                hashes.extend(failure.partial_outputs.values().copied());
            }
            for source in node.action.inputs().values() {
                if let crate::action::ArtifactRef::Content(hash) = source {
                    hashes.insert(*hash);
                }
            }
        }
        hashes
    }

    /// Referenced hashes absent from `store`. Empty for a sound trace.
    pub fn missing_artifacts(&self, store: &ArtifactStore) -> Vec<ContentHash> {
        self.referenced_hashes()
            .into_iter()
            .filter(|h| !store.contains(h))
            .collect()
    }

    pub fn save(&self) -> Vec<u8> {
        save_trace(self)
    }

    pub fn load(bytes: &[u8]) -> Result<Self, TraceError> {
        load_trace(bytes)
    }
}

/// Kahn's algorithm with a min-heap on append position.
pub fn topo_order(trace: &ExecutionTrace) -> Vec<String> {
    let n = trace.nodes.len();
    let mut indegree = vec![0usize; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, node) in trace.nodes.iter().enumerate() {
        let parents: BTreeSet<usize> = node.parents.iter().map(|p| trace.index[p]).collect();
        indegree[i] = parents.len();
        for p in parents {
            children[p].push(i);
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n)
        .filter(|&i| indegree[i] == 0)
        .map(Reverse)
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(i)) = ready.pop() {
        order.push(trace.nodes[i].node_id.clone());
        for &c in &children[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    debug_assert_eq!(order.len(), n, "append discipline guarantees acyclicity");
    order
}

pub fn save_trace(trace: &ExecutionTrace) -> Vec<u8> {
    let header = Header {
        format: TRACE_FORMAT.to_string(),
        version: TRACE_FORMAT_VERSION,
        trace_id: trace.trace_id.clone(),
        fork_of: trace.fork_of.clone(),
        environments: trace.environments.clone(),
    };
    let mut out = canonical::to_canonical_bytes(&header).expect("header is JSON-representable");
    out.push(b'\n');
    let (mut nodes, mut rejections) = (trace.nodes.iter(), trace.rejections.iter());
    for entry in &trace.layout {
        let line = match entry {
            Entry::Node => nodes.next().expect("layout matches nodes").canonical_bytes(),
            Entry::Rejection => canonical::to_canonical_bytes(&RejectionRecord {
                rejected: rejections.next().expect("layout matches rejections").clone(),
            })
            .expect("rejection is JSON-representable"),
        };
        out.extend_from_slice(&line);
        out.push(b'\n');
    }
    out
}

pub fn load_trace(bytes: &[u8]) -> Result<ExecutionTrace, TraceError> {
    let mut offset = 0usize;
    let mut trace: Option<ExecutionTrace> = None;
    let mut line_no = 0usize;
    while offset < bytes.len() {
        line_no += 1;
        let rest = &bytes[offset..];
        let Some(len) = rest.iter().position(|&b| b == b'\n') else {
            return Err(parse_error(line_no, rest.len() + 1, offset + rest.len(), "truncated record (missing line terminator)"));
        };
        let line = &rest[..len];
        let record = parse_record(line, line_no, offset)?;
        match trace.as_mut() {
            None => {
                let header: Header = from_json(record, line_no, offset)?;
                if header.format != TRACE_FORMAT || header.version != TRACE_FORMAT_VERSION {
                    return Err(parse_error(line_no, 1, offset, &format!(
                        "unsupported trace format {:?} version {}",
                        header.format, header.version
                    )));
                }
                let mut t = ExecutionTrace::new(header.trace_id);
                t.fork_of = header.fork_of;
                for (hash, binding) in header.environments {
                    if binding.env_hash() != hash {
                        return Err(parse_error(line_no, 1, offset, &format!(
                            "environment binding does not hash to its key {hash}"
                        )));
                    }
                    t.environments.insert(hash, binding);
                }
                trace = Some(t);
            }
            Some(t) => {
                let is_rejection = record.as_object().is_some_and(|o| o.contains_key("rejected"));
                if is_rejection {
                    let r: RejectionRecord = from_json(record, line_no, offset)?;
                    t.record_rejection(r.rejected);
                } else {
                    let node: TraceNode = from_json(record, line_no, offset)?;
                    t.append_node(node).map_err(|e| parse_error(line_no, 1, offset, &e.to_string()))?;
                }
            }
        }
        offset += len + 1;
    }
    trace.ok_or_else(|| parse_error(1, 1, 0, "empty input: missing header record"))
}

fn parse_record(line: &[u8], line_no: usize, offset: usize) -> Result<Json, TraceError> {
    let json: Json = serde_json::from_slice(line).map_err(|e| {
        parse_error(line_no, e.column(), offset + e.column().saturating_sub(1), &e.to_string())
    })?;
    if canonical::json_to_canonical_bytes(&json) != line {
        return Err(parse_error(line_no, 1, offset, "record is not in canonical form"));
    }
    Ok(json)
}

fn from_json<T: serde::de::DeserializeOwned>(json: Json, line_no: usize, offset: usize) -> Result<T, TraceError> {
    serde_json::from_value(json).map_err(|e| parse_error(line_no, 1, offset, &e.to_string()))
}

fn parse_error(line: usize, column: usize, offset: usize, message: &str) -> TraceError {
    TraceError::Parse {
        line,
        column,
        offset,
        message: message.to_string(),
    }
}
