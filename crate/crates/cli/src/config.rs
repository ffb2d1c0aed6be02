//! Experiment configuration: one JSON document with a section per module, `key=value`
//! overrides, the `GEOMOT_SEED` override and per-module seed derivation.

use std::path::{Path, PathBuf};

use geomot_core::evaluation::SweepConfig;
use geomot_core::factorization::{LossConfig, TrainConfig};
use geomot_core::graph_priors::GraphConfig;
use geomot_core::splitter::SplitterConfig;
use geomot_core::synthetic::{ModelShape, SyntheticSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult, StageExt};
use crate::io;

pub const SEED_ENV: &str = "GEOMOT_SEED";

/// Settings of the bound check run after training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundConfig {
    pub n_pairs: usize,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self { n_pairs: 128 }
    }
}

/// Everything one `geomot run` needs. Module seeds are not read from the file: they are
/// derived from `seed` by [`ExperimentConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub synthetic: SyntheticSpec,
    #[serde(default)]
    pub graph: GraphConfig,
    #[serde(default)]
    pub model: ModelShape,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default = "benchmark_train")]
    pub train: TrainConfig,
    #[serde(default)]
    pub splitter: SplitterConfig,
    /// Std of the noise separating the text and audio embeddings from the image one.
    #[serde(default = "default_modality_noise")]
    pub modality_noise: f64,
    #[serde(default = "benchmark_sweep")]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub bound: BoundConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

/// Benchmark training schedule: the default one with a 1e-3 learning rate.
pub fn benchmark_train() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        ..TrainConfig::default()
    }
}

/// One state per graph edge, so graph-path states sit exactly on prototypes.
pub fn benchmark_sweep() -> SweepConfig {
    SweepConfig {
        steps_per_edge: 1,
        ..SweepConfig::default()
    }
}

fn default_modality_noise() -> f64 {
    0.1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synthetic: SyntheticSpec::default(),
            graph: GraphConfig::default(),
            model: ModelShape::default(),
            loss: LossConfig::default(),
            train: benchmark_train(),
            splitter: SplitterConfig::default(),
            modality_noise: default_modality_noise(),
            sweep: benchmark_sweep(),
            bound: BoundConfig::default(),
            output_dir: default_output_dir(),
        }
    }
}

/// Seed for `module`, a fixed function of the root seed.
pub fn derive_seed(root: u64, module: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(module.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

impl ExperimentConfig {
    /// Reads `path` (or the defaults when `None`), applies `overrides`, then the
    /// `GEOMOT_SEED` environment variable, and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let base = match path {
            Some(p) => io::read_json::<Value>(p)?,
            None => serde_json::to_value(Self::default()).expect("serializable"),
        };
        let mut cfg: Self = from_value_with_overrides(base, overrides)?;
        if let Some(seed) = env_seed()? {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.synthetic.validate().stage("synthetic_bench", "config")?;
        self.graph.validate().stage("graph_priors", "config")?;
        self.model.validate().stage("factorization", "config")?;
        self.loss.validate().stage("factorization", "config")?;
        self.train.validate().stage("factorization", "config")?;
        self.splitter.validate().stage("dataset_splitter", "config")?;
        self.sweep.validate().stage("traversal", "config")?;
        if !(self.modality_noise >= 0.0 && self.modality_noise.is_finite()) {
            return Err(CliError::Config("modality_noise must be >= 0".into()));
        }
        if self.bound.n_pairs == 0 {
            return Err(CliError::Config("bound.n_pairs must be >= 1".into()));
        }
        Ok(())
    }

    /// Copy with every module seed derived from the root seed.
    pub fn resolve(&self) -> Self {
        let mut r = self.clone();
        r.synthetic.seed = derive_seed(self.seed, "synthetic_bench");
        r.train.seed = derive_seed(self.seed, "factorization");
        r.splitter.seed = derive_seed(self.seed, "dataset_splitter");
        r.sweep.seed = derive_seed(self.seed, "traversal");
        r
    }

    /// Seed used for graph construction and model initialisation.
    pub fn graph_seed(&self) -> u64 {
        derive_seed(self.seed, "graph_priors")
    }

    pub fn model_seed(&self) -> u64 {
        derive_seed(self.seed, "model_init")
    }

    pub fn bound_seed(&self) -> u64 {
        derive_seed(self.seed, "bound")
    }

    /// SHA-256 of the resolved config without its output directory, so the same
    /// experiment written to two places hashes equally.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self.resolve()).expect("serializable");
        v.as_object_mut().expect("object").remove("output_dir");
        sha256_hex(&serde_json::to_vec(&v).expect("serializable"))
    }
}

/// `GEOMOT_SEED`, when set.
pub fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("{SEED_ENV} must be an unsigned integer, got {s:?}"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Config(format!("{SEED_ENV}: {e}"))),
    }
}

/// Sets `a.b.c=value` inside `root`. The value is parsed as JSON when possible and taken
/// as a string otherwise. Intermediate objects are created as needed.
pub fn apply_override(root: &mut Value, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Config(format!("override {assignment:?} has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("override {key:?}: {} is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}

/// Applies `overrides` in order, then deserializes.
pub fn from_value_with_overrides<T: DeserializeOwned>(mut base: Value, overrides: &[String]) -> CliResult<T> {
    for o in overrides {
        apply_override(&mut base, o)?;
    }
    serde_json::from_value(base).map_err(|e| CliError::Config(e.to_string()))
}
