//! Experiment configuration, read from TOML.
//!
//! Every section is optional and falls back to its defaults. Unknown keys
//! are rejected, and errors name the offending field path
//! (e.g. `fgs.rho_levels`). Relative paths are resolved against the
//! directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ConfigError;
use crate::eval::ApMode;
use crate::fgs::FgsConfig;
use crate::proposals::{PerturbConfig, RandomSearchConfig};
use crate::scoring::FeatureWorldConfig;
use crate::structsvm::TrainConfig;

use super::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed; the generator, feature and trainer seeds follow it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub perturb: PerturbConfig,
    pub features: FeatureWorldConfig,
    pub fgs: FgsConfig,
    pub oracle: OracleConfig,
    pub random_search: RandomSearchConfig,
    pub train: TrainConfig,
    pub gp: GpTrainingConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            perturb: PerturbConfig::default(),
            features: FeatureWorldConfig::default(),
            fgs: FgsConfig::default(),
            oracle: OracleConfig::default(),
            random_search: RandomSearchConfig::default(),
            train: TrainConfig::default(),
            gp: GpTrainingConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Input files. Absent manifest/proposals are synthesized from `[synth]`
/// and `[perturb]`; absent features come from the synthetic world.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub manifest: Option<PathBuf>,
    pub proposals: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub gp_params: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub train_split: Option<String>,
    pub test_split: Option<String>,
}

impl DataConfig {
    pub fn train_split(&self) -> &str {
        self.train_split.as_deref().unwrap_or("train")
    }
    pub fn test_split(&self) -> &str {
        self.test_split.as_deref().unwrap_or("test")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Pruning threshold used in place of `fgs.f_prune` under the oracle scorer.
    pub f_prune: f64,
    pub methods: Vec<Method>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { f_prune: 0.05, methods: vec![Method::Baseline, Method::RandomSearch, Method::Fgs] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    RandomSearch,
    Fgs,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::RandomSearch => "random_search",
            Method::Fgs => "fgs",
        }
    }
}

/// Assembly of GP training observation sets and the hyperparameter fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpTrainingConfig {
    pub rho: f64,
    pub random_extra: usize,
    /// Fit one θ per category (otherwise one shared θ).
    pub per_category: bool,
    /// Use at most this many sets per fit (first ones in manifest order).
    pub max_sets: Option<usize>,
    pub max_iter: usize,
}

impl Default for GpTrainingConfig {
    fn default() -> Self {
        Self { rho: 0.3, random_extra: 50, per_category: true, max_sets: None, max_iter: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    pub mode: ApMode,
    /// Post-processing: keep detections scoring above this, then NMS.
    pub score_threshold: f64,
    pub nms_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: (1..=9).map(|k| k as f64 / 10.0).collect(),
            mode: ApMode::ElevenPoint,
            score_threshold: 0.0,
            nms_threshold: 0.3,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text. Relative paths stay relative.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::new("<toml>", e.message()))?;
        let cfg: Self = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let field = e.path().to_string();
            ConfigError::new(field, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("--config", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        let d = &mut self.data;
        for p in [&mut d.manifest, &mut d.proposals, &mut d.features, &mut d.model, &mut d.gp_params, &mut d.detections] {
            fix(p);
        }
        if self.out_dir.is_relative() {
            self.out_dir = base.join(&self.out_dir);
        }
    }

    /// Sets the master seed and everything that follows it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn perturb_config(&self) -> PerturbConfig {
        PerturbConfig { seed: self.seed, ..self.perturb.clone() }
    }

    pub fn feature_config(&self) -> FeatureWorldConfig {
        FeatureWorldConfig { seed: self.seed, ..self.features.clone() }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.eval.thresholds;
        if t.is_empty() || t.iter().any(|x| !(*x > 0.0 && *x < 1.0)) || t.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError::new("eval.thresholds", "must be non-empty, strictly increasing, in (0, 1)"));
        }
        self.fgs.validate().map_err(|m| ConfigError::new("fgs", m))?;
        self.perturb.validate().map_err(|m| ConfigError::new("perturb", m))?;
        self.synth.validate().map_err(|m| ConfigError::new("synth", m))?;
        self.train.validate().map_err(|e| ConfigError::new("train", e.to_string()))?;
        if !(self.gp.rho > 0.0 && self.gp.rho < 1.0) {
            return Err(ConfigError::new("gp.rho", "must lie in (0, 1)"));
        }
        if !(self.random_search.rho > 0.0 && self.random_search.rho < 1.0) {
            return Err(ConfigError::new("random_search.rho", "must lie in (0, 1)"));
        }
        if self.features.dim == 0 {
            return Err(ConfigError::new("features.dim", "must be positive"));
        }
        if self.oracle.methods.is_empty() {
            return Err(ConfigError::new("oracle.methods", "must name at least one method"));
        }
        Ok(())
    }

    /// Checks that every configured input file exists.
    pub fn check_paths(&self) -> Result<(), ConfigError> {
        let d = &self.data;
        let named = [
            ("data.manifest", &d.manifest),
            ("data.proposals", &d.proposals),
            ("data.features", &d.features),
            ("data.model", &d.model),
            ("data.gp_params", &d.gp_params),
            ("data.detections", &d.detections),
        ];
        for (field, p) in named {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(ConfigError::new(field, format!("{} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// Short hex digest of the canonical JSON form of the config.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("out_dir");
        }
        let canonical = serde_json::to_string(&value).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
