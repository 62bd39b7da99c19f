//! Adapters are the only channel through which actions cause effects.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::action::{Action, Value};

/// Named output payloads produced by an adapter invocation.
pub type Outputs = BTreeMap<String, Vec<u8>>;

/// What an adapter requires of the actions that invoke it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdapterSignature {
    pub required_inputs: Vec<String>,
    pub required_parameters: Vec<String>,
    /// Parameters that feed randomness; each must be mirrored in
    /// `metadata.seeds`.
    pub seeded_parameters: Vec<String>,
}

impl AdapterSignature {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn input(mut self, name: &str) -> Self {
        self.required_inputs.push(name.to_string());
        self
    }

    pub fn param(mut self, name: &str) -> Self {
        self.required_parameters.push(name.to_string());
        self
    }

    pub fn seeded(mut self, name: &str) -> Self {
        self.required_parameters.push(name.to_string());
        self.seeded_parameters.push(name.to_string());
        self
    }
}

/// A dispatch request: the admitted action plus its inputs resolved to bytes.
#[derive(Debug)]
pub struct AdapterCall<'a> {
    pub action: &'a Action,
    pub inputs: BTreeMap<String, Vec<u8>>,
}

impl AdapterCall<'_> {
    pub fn input(&self, name: &str) -> Result<&[u8], AdapterFailure> {
        self.inputs
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| AdapterFailure::new("MissingInput", format!("input {name:?} not supplied")))
    }

    pub fn optional_input(&self, name: &str) -> Option<&[u8]> {
        self.inputs.get(name).map(Vec::as_slice)
    }

    pub fn param(&self, name: &str) -> Result<&Value, AdapterFailure> {
        self.action.parameter(name).ok_or_else(|| {
            AdapterFailure::new("MissingParameter", format!("parameter {name:?} not supplied"))
        })
    }

    pub fn param_f64(&self, name: &str) -> Result<f64, AdapterFailure> {
        self.param(name)?.as_f64().ok_or_else(|| {
            AdapterFailure::new("InvalidParameter", format!("parameter {name:?} must be numeric"))
        })
    }

    pub fn param_u64(&self, name: &str) -> Result<u64, AdapterFailure> {
        self.param(name)?
            .as_i64()
            .and_then(|v| u64::try_from(v).ok())
            .ok_or_else(|| {
                AdapterFailure::new(
                    "InvalidParameter",
                    format!("parameter {name:?} must be a non-negative integer"),
                )
            })
    }

    /// The only sanctioned source of randomness for an adapter.
    pub fn seed(&self, name: &str) -> Result<u64, AdapterFailure> {
        self.action
            .metadata()
            .seeds
            .get(name)
            .copied()
            .ok_or_else(|| AdapterFailure::new("MissingSeed", format!("no seed recorded for {name:?}")))
    }
}

/// Structured adapter failure. Partial outputs are stored and logged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdapterFailure {
    pub failure_type: String,
    pub message: String,
    pub partial_outputs: Outputs,
}

impl AdapterFailure {
    pub fn new(failure_type: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            failure_type: failure_type.into(),
            message: message.into(),
            partial_outputs: Outputs::new(),
        }
    }

    pub fn with_partial(mut self, name: impl Into<String>, payload: Vec<u8>) -> Self {
        self.partial_outputs.insert(name.into(), payload);
        self
    }
}

impl fmt::Display for AdapterFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.failure_type, self.message)
    }
}

pub trait Adapter: Send + Sync {
    fn version(&self) -> &str;

    fn signature(&self) -> AdapterSignature;

    /// False for adapters drawing on entropy outside `metadata.seeds`. The
    /// engine refuses to run those under provenance.
    fn is_deterministic(&self) -> bool {
        true
    }

    fn invoke(&self, call: &AdapterCall<'_>) -> Result<Outputs, AdapterFailure>;
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("adapter {0:?} is already registered")]
    DuplicateAdapter(String),
    #[error("invalid adapter name {0:?}")]
    InvalidName(String),
}

struct Registered {
    adapter: Arc<dyn Adapter>,
    signature: AdapterSignature,
}

/// Name → adapter table, with a dispatch counter shared by every run that
/// uses the registry.
#[derive(Default)]
pub struct AdapterRegistry {
    adapters: BTreeMap<String, Registered>,
    dispatches: AtomicU64,
}

impl fmt::Debug for AdapterRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AdapterRegistry")
            .field("adapters", &self.versions())
            .field("dispatches", &self.dispatch_count())
            .finish()
    }
}

impl AdapterRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        adapter: impl Adapter + 'static,
    ) -> Result<(), RegistryError> {
        self.register_shared(name, Arc::new(adapter))
    }

    pub fn register_shared(
        &mut self,
        name: impl Into<String>,
        adapter: Arc<dyn Adapter>,
    ) -> Result<(), RegistryError> {
        let name = name.into();
        if !crate::action::is_identifier(&name) {
            return Err(RegistryError::InvalidName(name));
        }
        if self.adapters.contains_key(&name) {
            return Err(RegistryError::DuplicateAdapter(name));
        }
        let signature = adapter.signature();
        self.adapters.insert(name, Registered { adapter, signature });
        Ok(())
    }

    /// Builder form of [`register`](Self::register).
    pub fn with(mut self, name: impl Into<String>, adapter: impl Adapter + 'static) -> Result<Self, RegistryError> {
        self.register(name, adapter)?;
        Ok(self)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.adapters.contains_key(name)
    }

    pub fn signature(&self, name: &str) -> Option<&AdapterSignature> {
        self.adapters.get(name).map(|r| &r.signature)
    }

    pub fn len(&self) -> usize {
        self.adapters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adapters.is_empty()
    }

    pub fn versions(&self) -> BTreeMap<String, String> {
        self.adapters
            .iter()
            .map(|(name, r)| (name.clone(), r.adapter.version().to_string()))
            .collect()
    }

    /// Names of adapters that are not deterministic in their recorded context.
    pub fn nondeterministic_adapters(&self) -> Vec<String> {
        self.adapters
            .iter()
            .filter(|(_, r)| !r.adapter.is_deterministic())
            .map(|(name, _)| name.clone())
            .collect()
    }

    /// Total adapter invocations through this registry.
    pub fn dispatch_count(&self) -> u64 {
        self.dispatches.load(Ordering::SeqCst)
    }

    /// Invokes the adapter registered for the call's action type.
    pub(crate) fn dispatch(&self, call: &AdapterCall<'_>) -> Result<Outputs, AdapterFailure> {
        let registered = self.adapters.get(call.action.action_type()).ok_or_else(|| {
            AdapterFailure::new(
                "UnknownActionType",
                format!("no adapter for {:?}", call.action.action_type()),
            )
        })?;
        self.dispatches.fetch_add(1, Ordering::SeqCst);
        registered.adapter.invoke(call)
    }
}
