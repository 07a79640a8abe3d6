use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gss_core::corpus::DEFAULT_EPSILON;
use gss_core::eval::{BarbellConfig, GeometricConfig, Method, TwoBlockConfig};
use gss_core::gat::{GatConfig, TrainConfig};
use gss_core::hierarchy::HierarchyConfig;
use gss_core::pipeline::PipelineConfig;
use gss_core::{ErrorClass, GssError};
use serde::{Deserialize, Serialize};

/// A bad flag, missing input or unreadable config file. Exits with 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

pub fn classify(err: &anyhow::Error) -> ErrorClass {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return ErrorClass::Usage;
        }
        if let Some(e) = cause.downcast_ref::<GssError>() {
            return e.class();
        }
    }
    ErrorClass::Data
}

/// The error chain joined with `: `, skipping causes whose text the message
/// already ends with.
pub fn message(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if out.ends_with(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Usage => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

/// Encoder sizes for `train-toy`. Input width comes from the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dim: usize,
    pub rank: usize,
    pub layers: usize,
    pub heads: usize,
    pub epsilon: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 8,
            rank: 2,
            layers: 3,
            heads: 4,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl ModelConfig {
    pub fn gat(&self, input_dim: usize) -> GatConfig {
        GatConfig {
            layers: self.layers,
            heads: self.heads,
            epsilon: self.epsilon,
            ..GatConfig::toy(input_dim, self.dim, self.rank)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    pub methods: Vec<Method>,
    /// One run per entry. No default: it must be given.
    pub seeds: Option<Vec<u64>>,
    pub timing: bool,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            methods: vec![Method::Cosine, Method::GeodesicFlat, Method::GeodesicHier],
            seeds: None,
            timing: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureConfig {
    pub barbell: BarbellConfig,
    pub geometric: GeometricConfig,
    pub two_block: TwoBlockConfig,
    /// Query nodes drawn from the test split of the geometric fixture.
    pub geometric_queries: usize,
}

/// Every setting a subcommand may read, fully resolved before it runs and
/// echoed with its output. Feeding the echo back through `--config`
/// reproduces the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub threads: Option<usize>,
    /// Seed for stochastic subcommands. No default.
    pub seed: Option<u64>,
    pub k: usize,
    pub pipeline: PipelineConfig,
    pub hierarchy: HierarchyConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub evaluate: EvaluateConfig,
    pub fixture: FixtureConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            threads: None,
            seed: None,
            k: 10,
            pipeline: PipelineConfig::default(),
            hierarchy: HierarchyConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            evaluate: EvaluateConfig::default(),
            fixture: FixtureConfig {
                geometric_queries: 100,
                ..Default::default()
            },
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with a config file. `.json` files are read as JSON,
    /// anything else as TOML.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config file {}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| usage(format!("invalid config file {}: {e}", path.display())))
    }

    pub fn corpus_path(&self) -> Result<&Path> {
        self.corpus
            .as_deref()
            .ok_or_else(|| usage("missing --corpus (or GSS_CORPUS, or `corpus` in the config file)"))
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| usage("missing --seed: stochastic subcommands need an explicit seed"))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
