//! Five-stage synthetic scientific workflow: load, analyze, standardize,
//! train, evaluate.
//!
//! Every adapter is a pure function of its inputs, parameters and recorded
//! seeds. Artifact payloads are canonical JSON (see `docs/artifacts.md`).

pub mod numerics;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::action::{Action, ArtifactRef, Predicate};
use crate::adapter::{Adapter, AdapterCall, AdapterFailure, AdapterRegistry, AdapterSignature, Outputs};
use crate::canonical;

pub const FEATURES: usize = 4;
pub const CHECKPOINT: &str = "checkpoint";
pub const WARM_START: &str = "warm_start";
pub const INJECTED_FAULT: &str = "InjectedTrainingFault";
pub const ADAPTER_VERSION: &str = "1.0.0";

/// Artifacts whose joint presence means the workflow is complete.
pub const REQUIRED_ARTIFACTS: [&str; 5] = ["dataset", "stats", "dataset_std", "model", "report"];

/// Per-feature cluster centres for label 1 (negated for label 0).
const CENTRES: [f64; FEATURES] = [1.0, 0.5, -0.75, 0.25];
/// Half-width of the uniform noise added to each feature.
const NOISE: f64 = 0.9;

/// One workflow stage: adapter, `(input name, artifact)` wiring, output.
#[derive(Debug, Clone, Copy)]
pub struct Stage {
    pub action_type: &'static str,
    pub inputs: &'static [(&'static str, &'static str)],
    pub output: &'static str,
}

pub const STAGES: [Stage; 5] = [
    Stage {
        action_type: "load_data",
        inputs: &[],
        output: "dataset",
    },
    Stage {
        action_type: "analyze",
        inputs: &[("dataset", "dataset")],
        output: "stats",
    },
    Stage {
        action_type: "preprocess",
        inputs: &[("dataset", "dataset")],
        output: "dataset_std",
    },
    Stage {
        action_type: "train",
        inputs: &[("dataset", "dataset_std")],
        output: "model",
    },
    Stage {
        action_type: "evaluate",
        inputs: &[("model", "model"), ("dataset", "dataset_std")],
        output: "report",
    },
];

pub fn stage_index_for_output(artifact: &str) -> Option<usize> {
    STAGES.iter().position(|s| s.output == artifact)
}

pub fn stage_index_for_type(action_type: &str) -> Option<usize> {
    STAGES.iter().position(|s| s.action_type == action_type)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    pub seed: u64,
    pub n_rows: u64,
    pub learning_rate: f64,
    pub iterations: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_rows: 200,
            learning_rate: 0.1,
            iterations: 200,
        }
    }
}

/// Builds the action for stage `index` with the given input wiring.
pub fn stage_action(cfg: &WorkloadConfig, index: usize, inputs: BTreeMap<String, ArtifactRef>, planner: &str) -> Action {
    let stage = &STAGES[index];
    let mut b = Action::builder(stage.action_type)
        .planner_config("planner", planner)
        .produces(stage.output);
    for (_, artifact) in stage.inputs {
        b = b.precondition(Predicate::ArtifactExists(artifact.to_string()));
    }
    for (name, source) in inputs {
        b = b.input(name, source);
    }
    match stage.action_type {
        "load_data" => {
            b = b
                .param("seed", cfg.seed as i64)
                .param("n_rows", cfg.n_rows as i64)
                .seed("seed", cfg.seed);
        }
        "train" => {
            b = b
                .param("learning_rate", cfg.learning_rate)
                .param("iterations", cfg.iterations as i64)
                .param("seed", cfg.seed as i64)
                .seed("seed", cfg.seed);
        }
        _ => {}
    }
    b.build()
}

/// SplitMix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Row {
    pub features: [f64; FEATURES],
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub seed: u64,
    pub rows: Vec<Row>,
}

impl Dataset {
    /// Two linearly separable clusters (feature 0 alone separates them).
    pub fn generate(seed: u64, n_rows: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let rows = (0..n_rows)
            .map(|_| {
                let label = (rng.next_u64() >> 63) as u8;
                let sign = if label == 1 { 1.0 } else { -1.0 };
                let mut features = [0.0; FEATURES];
                for (j, f) in features.iter_mut().enumerate() {
                    *f = sign * CENTRES[j] + (2.0 * rng.next_unit() - 1.0) * NOISE;
                }
                Row { features, label }
            })
            .collect();
        Self { seed, rows }
    }

    /// Rows `[0, split)` train, `[split, n)` test, split at 80%.
    pub fn split_index(&self) -> usize {
        self.rows.len() * 4 / 5
    }

    fn labelled(&self, range: std::ops::Range<usize>) -> Vec<([f64; FEATURES], u8)> {
        self.rows[range].iter().map(|r| (r.features, r.label)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stats {
    pub n_rows: u64,
    pub features: Vec<FeatureStats>,
}

/// Population statistics of one column.
pub fn column_stats(column: &[f64]) -> FeatureStats {
    if column.is_empty() {
        return FeatureStats {
            mean: 0.0,
            std: 0.0,
            min: 0.0,
            max: 0.0,
        };
    }
    let n = column.len() as f64;
    let mean = numerics::sum(column.iter().copied()) / n;
    let var = numerics::sum(column.iter().map(|x| (x - mean) * (x - mean))) / n;
    FeatureStats {
        mean,
        std: var.sqrt(),
        min: column.iter().copied().fold(f64::INFINITY, f64::min),
        max: column.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

pub fn dataset_stats(dataset: &Dataset) -> Stats {
    let features = (0..FEATURES)
        .map(|j| {
            let column: Vec<f64> = dataset.rows.iter().map(|r| r.features[j]).collect();
            column_stats(&column)
        })
        .collect();
    Stats {
        n_rows: dataset.rows.len() as u64,
        features,
    }
}

/// `(x - mean) / std` per column; zero-variance columns pass through as is.
pub fn standardize(dataset: &Dataset) -> Dataset {
    let stats = dataset_stats(dataset);
    let rows = dataset
        .rows
        .iter()
        .map(|r| {
            let mut features = r.features;
            for (j, f) in features.iter_mut().enumerate() {
                let s = &stats.features[j];
                if s.std > 0.0 {
                    *f = (*f - s.mean) / s.std;
                }
            }
            Row { features, label: r.label }
        })
        .collect();
    Dataset {
        seed: dataset.seed,
        rows,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Model {
    pub weights: [f64; FEATURES],
    pub bias: f64,
    pub learning_rate: f64,
    pub iterations: u64,
}

/// Training state captured mid-run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub weights: [f64; FEATURES],
    pub bias: f64,
    pub completed_iterations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub accuracy: f64,
    pub correct: u64,
    pub n_test: u64,
}

/// Logistic regression by full-batch gradient descent over the training
/// split, starting from `start` (zeros when absent) and stopping at `until`
/// total iterations.
pub fn train_model(dataset: &Dataset, learning_rate: f64, start: Option<&Checkpoint>, until: u64) -> Checkpoint {
    let rows = dataset.labelled(0..dataset.split_index());
    let mut state = start.cloned().unwrap_or(Checkpoint {
        weights: [0.0; FEATURES],
        bias: 0.0,
        completed_iterations: 0,
    });
    while state.completed_iterations < until {
        numerics::descend(&mut state.weights, &mut state.bias, &rows, learning_rate);
        state.completed_iterations += 1;
    }
    state
}

pub fn evaluate_model(model: &Model, dataset: &Dataset) -> Report {
    let test = dataset.labelled(dataset.split_index()..dataset.rows.len());
    let correct = test
        .iter()
        .filter(|(x, y)| {
            let p = numerics::sigmoid(numerics::score(&model.weights, model.bias, x));
            u8::from(p >= 0.5) == *y
        })
        .count() as u64;
    let n_test = test.len() as u64;
    Report {
        accuracy: if n_test == 0 { 0.0 } else { correct as f64 / n_test as f64 },
        correct,
        n_test,
    }
}

fn encode<T: Serialize>(value: &T) -> Vec<u8> {
    canonical::to_canonical_bytes(value).expect("workload artifacts are JSON-representable")
}

fn decode<T: serde::de::DeserializeOwned>(call: &AdapterCall<'_>, input: &str) -> Result<T, AdapterFailure> {
    let bytes = call.input(input)?;
    canonical::from_canonical_bytes(bytes)
        .map_err(|e| AdapterFailure::new("MalformedArtifact", format!("input {input:?}: {e}")))
}

fn single(name: &str, payload: Vec<u8>) -> Outputs {
    Outputs::from([(name.to_string(), payload)])
}

pub struct LoadData;

impl Adapter for LoadData {
    fn version(&self) -> &str {
        ADAPTER_VERSION
    }

    fn signature(&self) -> AdapterSignature {
        AdapterSignature::new().seeded("seed").param("n_rows")
    }

    fn invoke(&self, call: &AdapterCall<'_>) -> Result<Outputs, AdapterFailure> {
        let dataset = Dataset::generate(call.seed("seed")?, call.param_u64("n_rows")?);
        Ok(single("dataset", encode(&dataset)))
    }
}

pub struct Analyze;

impl Adapter for Analyze {
    fn version(&self) -> &str {
        ADAPTER_VERSION
    }

    fn signature(&self) -> AdapterSignature {
        AdapterSignature::new().input("dataset")
    }

    fn invoke(&self, call: &AdapterCall<'_>) -> Result<Outputs, AdapterFailure> {
        let dataset: Dataset = decode(call, "dataset")?;
        Ok(single("stats", encode(&dataset_stats(&dataset))))
    }
}

pub struct Preprocess;

impl Adapter for Preprocess {
    fn version(&self) -> &str {
        ADAPTER_VERSION
    }

    fn signature(&self) -> AdapterSignature {
        AdapterSignature::new().input("dataset")
    }

    fn invoke(&self, call: &AdapterCall<'_>) -> Result<Outputs, AdapterFailure> {
        let dataset: Dataset = decode(call, "dataset")?;
        Ok(single("dataset_std", encode(&standardize(&dataset))))
    }
}

/// Trainer. With `inject_fault`, a run that starts from scratch stops half
/// way, emits a `checkpoint` partial output and fails with
/// `InjectedTrainingFault`; a run resuming from a `warm_start` checkpoint
/// completes normally.
#[derive(Default)]
pub struct Train {
    pub inject_fault: bool,
}

impl Train {
    pub fn faulty() -> Self {
        Self { inject_fault: true }
    }
}

impl Adapter for Train {
    fn version(&self) -> &str {
        if self.inject_fault {
            "1.0.0+fault-injection"
        } else {
            ADAPTER_VERSION
        }
    }

    fn signature(&self) -> AdapterSignature {
        AdapterSignature::new()
            .input("dataset")
            .param("learning_rate")
            .param("iterations")
            .seeded("seed")
    }

    fn invoke(&self, call: &AdapterCall<'_>) -> Result<Outputs, AdapterFailure> {
        let dataset: Dataset = decode(call, "dataset")?;
        let learning_rate = call.param_f64("learning_rate")?;
        let iterations = call.param_u64("iterations")?;
        // Full-batch descent from zeros draws no randomness; the seed is
        // recorded so the action stays replayable if that ever changes.
        call.seed("seed")?;
        let start: Option<Checkpoint> = match call.optional_input(WARM_START) {
            Some(_) => Some(decode(call, WARM_START)?),
            None => None,
        };
        if self.inject_fault && start.is_none() {
            let partial = train_model(&dataset, learning_rate, None, iterations / 2);
            return Err(AdapterFailure::new(
                INJECTED_FAULT,
                format!(
                    "training interrupted after {} of {iterations} iterations",
                    partial.completed_iterations
                ),
            )
            .with_partial(CHECKPOINT, encode(&partial)));
        }
        let done = train_model(&dataset, learning_rate, start.as_ref(), iterations);
        let model = Model {
            weights: done.weights,
            bias: done.bias,
            learning_rate,
            iterations,
        };
        Ok(single("model", encode(&model)))
    }
}

pub struct Evaluate;

impl Adapter for Evaluate {
    fn version(&self) -> &str {
        ADAPTER_VERSION
    }

    fn signature(&self) -> AdapterSignature {
        AdapterSignature::new().input("model").input("dataset")
    }

    fn invoke(&self, call: &AdapterCall<'_>) -> Result<Outputs, AdapterFailure> {
        let model: Model = decode(call, "model")?;
        let dataset: Dataset = decode(call, "dataset")?;
        Ok(single("report", encode(&evaluate_model(&model, &dataset))))
    }
}

static UNSEEDED_DRAWS: AtomicU64 = AtomicU64::new(1);

/// Trainer whose starting bias comes from a process-wide counter instead of
/// recorded seeds: unlogged stochasticity. The engine only admits it when
/// provenance is off.
pub struct UnseededTrain;

impl Adapter for UnseededTrain {
    fn version(&self) -> &str {
        "1.0.0+unseeded"
    }

    fn signature(&self) -> AdapterSignature {
        Train::default().signature()
    }

    fn is_deterministic(&self) -> bool {
        false
    }

    fn invoke(&self, call: &AdapterCall<'_>) -> Result<Outputs, AdapterFailure> {
        let dataset: Dataset = decode(call, "dataset")?;
        let learning_rate = call.param_f64("learning_rate")?;
        let iterations = call.param_u64("iterations")?;
        let draw = UNSEEDED_DRAWS.fetch_add(1, Ordering::Relaxed);
        let start = Checkpoint {
            weights: [0.0; FEATURES],
            bias: draw as f64 * 1e-3,
            completed_iterations: 0,
        };
        let done = train_model(&dataset, learning_rate, Some(&start), iterations);
        let model = Model {
            weights: done.weights,
            bias: done.bias,
            learning_rate,
            iterations,
        };
        Ok(single("model", encode(&model)))
    }
}

/// Which trainer a registry carries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerVariant {
    #[default]
    Standard,
    FaultInjection,
    Unseeded,
}

pub fn registry(trainer: TrainerVariant) -> AdapterRegistry {
    let mut registry = AdapterRegistry::new();
    registry.register("load_data", LoadData).expect("fresh registry");
    registry.register("analyze", Analyze).expect("fresh registry");
    registry.register("preprocess", Preprocess).expect("fresh registry");
    match trainer {
        TrainerVariant::Standard => registry.register("train", Train::default()),
        TrainerVariant::FaultInjection => registry.register("train", Train::faulty()),
        TrainerVariant::Unseeded => registry.register("train", UnseededTrain),
    }
    .expect("fresh registry");
    registry.register("evaluate", Evaluate).expect("fresh registry");
    registry
}

pub fn standard_registry() -> AdapterRegistry {
    registry(TrainerVariant::Standard)
}
