//! The action schema: the immutable, declarative unit of executable intent.
//!
//! An [`Action`] names the adapter to invoke, its inputs and parameters, the
//! state it requires and the outputs it promises. It carries no code. Its
//! [canonical bytes](Action::canonical_bytes) are what gets hashed and logged.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::adapter::AdapterRegistry;
use crate::canonical::{self, CanonicalError};
use crate::store::ContentHash;

/// A parameter or inline input value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<Value>),
    Map(BTreeMap<String, Value>),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Float(x) => Some(*x),
            Value::Int(i) => Some(*i as f64),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    /// True when every float inside is finite.
    pub fn is_finite(&self) -> bool {
        match self {
            Value::Float(x) => x.is_finite(),
            Value::List(items) => items.iter().all(Value::is_finite),
            Value::Map(map) => map.values().all(Value::is_finite),
            _ => true,
        }
    }

    /// Parses command-line style text: integer, then float, then boolean,
    /// falling back to a string.
    pub fn parse_loose(text: &str) -> Value {
        if let Ok(i) = text.parse::<i64>() {
            Value::Int(i)
        } else if let Some(x) = text.parse::<f64>().ok().filter(|x| x.is_finite()) {
            Value::Float(x)
        } else if let Ok(b) = text.parse::<bool>() {
            Value::Bool(b)
        } else {
            Value::Str(text.to_string())
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bytes = canonical::to_canonical_bytes(self).map_err(|_| fmt::Error)?;
        f.write_str(&String::from_utf8_lossy(&bytes))
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Float(x)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.to_string())
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

/// Where an input comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactRef {
    Inline(Value),
    Content(ContentHash),
    /// `@node:<id>/output:<name>`, resolved by the engine at dispatch time.
    /// Kept as raw text so malformed references surface as validation
    /// violations rather than construction failures.
    Symbolic(String),
}

impl ArtifactRef {
    pub fn node_output(node_id: &str, output: &str) -> Self {
        ArtifactRef::Symbolic(SymbolicRef::new(node_id, output).to_string())
    }
}

/// Parsed form of a symbolic reference.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SymbolicRef {
    pub node_id: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed symbolic reference {0:?} (expected @node:<id>/output:<name>)")]
pub struct MalformedReference(pub String);

impl SymbolicRef {
    pub fn new(node_id: &str, output: &str) -> Self {
        Self {
            node_id: node_id.to_string(),
            output: output.to_string(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, MalformedReference> {
        let malformed = || MalformedReference(text.to_string());
        let rest = text.strip_prefix("@node:").ok_or_else(malformed)?;
        let (node_id, output) = rest.split_once("/output:").ok_or_else(malformed)?;
        if !is_identifier(node_id) || !is_identifier(output) {
            return Err(malformed());
        }
        Ok(Self::new(node_id, output))
    }
}

impl fmt::Display for SymbolicRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@node:{}/output:{}", self.node_id, self.output)
    }
}

/// Identifier charset shared by node ids and artifact names.
pub(crate) fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.'))
}

/// Precondition vocabulary. Names refer to artifacts available in the run, or
/// to the action's own parameters for `ParamEquals`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    ArtifactExists(String),
    ArtifactAbsent(String),
    ParamEquals(String, Value),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectDecl {
    Produces(String),
}

impl EffectDecl {
    pub fn output(&self) -> &str {
        match self {
            EffectDecl::Produces(name) => name,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub logical_timestamp: u64,
    pub environment_id: String,
    pub planner_config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
}

/// Immutable action record. Build one with [`Action::builder`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Action {
    id: String,
    #[serde(rename = "type")]
    action_type: String,
    inputs: BTreeMap<String, ArtifactRef>,
    parameters: BTreeMap<String, Value>,
    preconditions: Vec<Predicate>,
    effects: Vec<EffectDecl>,
    metadata: Metadata,
}

impl Action {
    pub fn builder(action_type: impl Into<String>) -> ActionBuilder {
        ActionBuilder {
            action: Action {
                id: String::new(),
                action_type: action_type.into(),
                inputs: BTreeMap::new(),
                parameters: BTreeMap::new(),
                preconditions: Vec::new(),
                effects: Vec::new(),
                metadata: Metadata::default(),
            },
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn action_type(&self) -> &str {
        &self.action_type
    }

    pub fn inputs(&self) -> &BTreeMap<String, ArtifactRef> {
        &self.inputs
    }

    pub fn parameters(&self) -> &BTreeMap<String, Value> {
        &self.parameters
    }

    pub fn parameter(&self, name: &str) -> Option<&Value> {
        self.parameters.get(name)
    }

    pub fn preconditions(&self) -> &[Predicate] {
        &self.preconditions
    }

    pub fn effects(&self) -> &[EffectDecl] {
        &self.effects
    }

    pub fn metadata(&self) -> &Metadata {
        &self.metadata
    }

    /// Copy of this action re-issued under a new identity, logical time and
    /// environment. Used by the engine when admitting a proposal.
    pub fn reissued(&self, id: &str, logical_timestamp: u64, environment_id: &str) -> Action {
        let mut next = self.clone();
        next.id = id.to_string();
        next.metadata.logical_timestamp = logical_timestamp;
        next.metadata.environment_id = environment_id.to_string();
        next
    }

    /// Copy with parameters overridden. Seeds tracking an overridden
    /// parameter of the same name follow the new value.
    pub fn with_parameters(&self, overrides: &BTreeMap<String, Value>) -> Action {
        let mut next = self.clone();
        for (name, value) in overrides {
            if let (Some(seed), Some(v)) = (next.metadata.seeds.get_mut(name), value.as_i64()) {
                *seed = v as u64;
            }
            next.parameters.insert(name.clone(), value.clone());
        }
        next
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical_bytes(self)
    }

    pub fn parse(bytes: &[u8]) -> Result<Action, CanonicalError> {
        canonical::from_canonical_bytes(bytes)
    }
}

/// Deterministic serialization of an action.
pub fn canonical_bytes(action: &Action) -> Vec<u8> {
    // Non-finite floats are the only unrepresentable content; the builder and
    // validation both exclude them, but fall back to their null encoding.
    canonical::to_canonical_bytes(action).expect("actions are always JSON-representable")
}

pub struct ActionBuilder {
    action: Action,
}

impl ActionBuilder {
    pub fn id(mut self, id: impl Into<String>) -> Self {
        self.action.id = id.into();
        self
    }

    pub fn input(mut self, name: impl Into<String>, source: ArtifactRef) -> Self {
        self.action.inputs.insert(name.into(), source);
        self
    }

    pub fn param(mut self, name: impl Into<String>, value: impl Into<Value>) -> Self {
        self.action.parameters.insert(name.into(), value.into());
        self
    }

    pub fn precondition(mut self, predicate: Predicate) -> Self {
        self.action.preconditions.push(predicate);
        self
    }

    pub fn produces(mut self, output: impl Into<String>) -> Self {
        self.action.effects.push(EffectDecl::Produces(output.into()));
        self
    }

    pub fn seed(mut self, name: impl Into<String>, seed: u64) -> Self {
        self.action.metadata.seeds.insert(name.into(), seed);
        self
    }

    pub fn planner_config(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.action.metadata.planner_config.insert(key.into(), value.into());
        self
    }

    pub fn logical_timestamp(mut self, ts: u64) -> Self {
        self.action.metadata.logical_timestamp = ts;
        self
    }

    pub fn environment_id(mut self, env: impl Into<String>) -> Self {
        self.action.metadata.environment_id = env.into();
        self
    }

    pub fn build(self) -> Action {
        self.action
    }
}

/// One reason an action is refused admission.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyId,
    UnknownActionType(String),
    MissingInput(String),
    MissingParameter(String),
    /// A seeded parameter has no matching entry in `metadata.seeds`.
    MissingSeed(String),
    /// The seed entry disagrees with the parameter value.
    SeedMismatch(String),
    MalformedReference { input: String, reference: String },
    DuplicateEffect(String),
    InvalidName(String),
    NonFiniteParameter(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId => write!(f, "action id is empty"),
            Violation::UnknownActionType(t) => write!(f, "unknown action type {t:?}"),
            Violation::MissingInput(n) => write!(f, "missing required input {n:?}"),
            Violation::MissingParameter(n) => write!(f, "missing required parameter {n:?}"),
            Violation::MissingSeed(n) => write!(f, "seeded parameter {n:?} has no recorded seed"),
            Violation::SeedMismatch(n) => write!(f, "recorded seed for {n:?} differs from parameter"),
            Violation::MalformedReference { input, reference } => {
                write!(f, "input {input:?} has malformed reference {reference:?}")
            }
            Violation::DuplicateEffect(n) => write!(f, "output {n:?} declared more than once"),
            Violation::InvalidName(n) => write!(f, "invalid input/parameter/output name {n:?}"),
            Violation::NonFiniteParameter(n) => write!(f, "parameter {n:?} is not finite"),
        }
    }
}

/// Outcome of admission checking. Empty means the action is admissible.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("OK");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks an action against its schema and the adapter that would run it.
/// Violations are collected, not short-circuited.
pub fn validate_action(action: &Action, registry: &AdapterRegistry) -> ValidationReport {
    let mut violations = Vec::new();
    if action.id.is_empty() {
        violations.push(Violation::EmptyId);
    }
    for name in action.inputs.keys().chain(action.parameters.keys()) {
        if !is_identifier(name) {
            violations.push(Violation::InvalidName(name.clone()));
        }
    }
    for (input, source) in &action.inputs {
        if let ArtifactRef::Symbolic(reference) = source {
            if SymbolicRef::parse(reference).is_err() {
                violations.push(Violation::MalformedReference {
                    input: input.clone(),
                    reference: reference.clone(),
                });
            }
        }
        if let ArtifactRef::Inline(value) = source {
            if !value.is_finite() {
                violations.push(Violation::NonFiniteParameter(input.clone()));
            }
        }
    }
    for (name, value) in &action.parameters {
        if !value.is_finite() {
            violations.push(Violation::NonFiniteParameter(name.clone()));
        }
    }
    let mut seen = BTreeSet::new();
    for effect in &action.effects {
        let output = effect.output();
        if !is_identifier(output) {
            violations.push(Violation::InvalidName(output.to_string()));
        }
        if !seen.insert(output) {
            violations.push(Violation::DuplicateEffect(output.to_string()));
        }
    }

    match registry.signature(&action.action_type) {
        None => violations.push(Violation::UnknownActionType(action.action_type.clone())),
        Some(sig) => {
            for input in &sig.required_inputs {
                if !action.inputs.contains_key(input) {
                    violations.push(Violation::MissingInput(input.clone()));
                }
            }
            for param in &sig.required_parameters {
                if !action.parameters.contains_key(param) {
                    violations.push(Violation::MissingParameter(param.clone()));
                }
            }
            for param in &sig.seeded_parameters {
                match action.metadata.seeds.get(param) {
                    None => violations.push(Violation::MissingSeed(param.clone())),
                    Some(seed) => {
                        let matches = action
                            .parameters
                            .get(param)
                            .and_then(Value::as_i64)
                            .is_none_or(|v| v as u64 == *seed);
                        if !matches {
                            violations.push(Violation::SeedMismatch(param.clone()));
                        }
                    }
                }
            }
        }
    }
    ValidationReport { violations }
}
