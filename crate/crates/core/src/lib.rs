//! Deterministic, provenance-tracked execution of planner-driven workflows.
//!
//! Actions are typed records validated against an adapter registry. The
//! engine executes them one at a time, stores every artifact by content hash
//! and logs each execution as a node of a DAG trace. Traces can be replayed
//! without re-running anything and forked at any node.

pub mod action;
pub mod adapter;
pub mod batch;
pub mod canonical;
pub mod config;
pub mod engine;
pub mod metrics;
pub mod planner;
pub mod replay;
pub mod store;
pub mod trace;
pub mod workload;

pub use action::{Action, ArtifactRef, Value};
pub use adapter::{Adapter, AdapterRegistry};
pub use engine::{run_workflow, Engine, ExecutionPolicy, RunResult, Terminal};
pub use planner::{Planner, PlannerMode};
pub use replay::{fork, replay, verify_replay, ForkSpec};
pub use store::{ArtifactStore, ContentHash};
pub use trace::ExecutionTrace;
