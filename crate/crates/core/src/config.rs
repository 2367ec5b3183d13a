//! Run configuration (TOML) and assembly of the runtime components.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendRegistry, BuildContext, ModelSpec};
use crate::data::{self, AnswerKey, Example, DEFAULT_CAP, DEFAULT_TRAIN_FRACTION};
use crate::encoder::{EmbedderRegistry, EncoderConfig, StateEncoder};
use crate::env::{action_count, EpisodeConfig, Environment, RewardConfig};
use crate::error::{Error, Result};
use crate::evalkit::EvaluatorRegistry;
use crate::policy::{PolicyDims, PolicyParameters};
use crate::ppo::PpoConfig;
use crate::seed::derive_seed;

fn d_seed() -> u64 {
    42
}
fn d_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}
fn d_evaluator() -> String {
    "f1".into()
}
fn d_cap() -> usize {
    DEFAULT_CAP
}
fn d_train_fraction() -> f64 {
    DEFAULT_TRAIN_FRACTION
}
fn d_hidden() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// JSONL files, one `{query, answers, task}` object per line.
    pub datasets: Vec<PathBuf>,
    /// Examples kept per dataset before splitting.
    #[serde(default = "d_cap")]
    pub cap: usize,
    #[serde(default = "d_train_fraction")]
    pub train_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default = "d_hidden")]
    pub hidden: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig { hidden: d_hidden() }
    }
}

/// Everything needed to train, evaluate or route.
///
/// Relative paths are resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Drives the data split, parameter init, rollouts and evaluation.
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "d_evaluator")]
    pub evaluator: String,
    pub data: DataConfig,
    #[serde(default)]
    pub episode: EpisodeConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    pub models: Vec<ModelSpec>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.ppo.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file, resolving relative paths.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let base = std::path::absolute(base).map_err(|e| Error::io(base, e))?;
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Rebuilds a config stored alongside a checkpoint.
    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_value(value.clone())
            .map_err(|e| Error::Config(format!("stored run config: {e}")))?;
        cfg.ppo.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
        self.output_dir = join(&self.output_dir);
        for d in &mut self.data.datasets {
            *d = join(d);
        }
        for m in &mut self.models {
            if let Some(serde_json::Value::String(s)) = m.params.get_mut("script_path") {
                *s = join(Path::new(s.as_str())).to_string_lossy().into_owned();
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.datasets.is_empty() {
            return Err(Error::Config("data.datasets is empty".into()));
        }
        if self.data.cap == 0 {
            return Err(Error::Config("data.cap must be at least 1".into()));
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "data.train_fraction must be in (0, 1), got {}",
                self.data.train_fraction
            )));
        }
        if self.models.is_empty() {
            return Err(Error::Config("at least one [[models]] entry is required".into()));
        }
        if self.policy.hidden == 0 {
            return Err(Error::Config("policy.hidden must be at least 1".into()));
        }
        for m in &self.models {
            m.validate()?;
        }
        self.episode.clone().normalized()?;
        self.encoder.validate()?;
        self.ppo.validate()
    }

    pub fn policy_dims(&self) -> PolicyDims {
        PolicyDims {
            embed_dim: self.encoder.embed_dim,
            hidden: self.policy.hidden,
            actions: action_count(self.models.len(), self.episode.halting_enabled),
            stages: self.episode.max_hops,
        }
    }
}

/// A loaded dataset with its train/test split.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub name: String,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

/// Strategy registries consulted when assembling a runtime.
#[derive(Default)]
pub struct Registries {
    pub backends: BackendRegistry,
    pub embedders: EmbedderRegistry,
    pub evaluators: EvaluatorRegistry,
}

/// Assembled environment, encoder and data for one run configuration.
#[derive(Debug, Clone)]
pub struct Runtime {
    pub config: RunConfig,
    pub env: Environment,
    pub encoder: StateEncoder,
    pub datasets: Vec<DatasetSplit>,
}

impl Runtime {
    pub fn build(config: RunConfig) -> Result<Self> {
        Self::build_with(config, &Registries::default())
    }

    pub fn build_with(config: RunConfig, reg: &Registries) -> Result<Self> {
        config.validate()?;
        let mut all = Vec::new();
        let mut datasets = Vec::new();
        for (i, path) in config.data.datasets.iter().enumerate() {
            let examples = data::load_dataset(path)?;
            if examples.is_empty() {
                return Err(Error::Config(format!("{}: dataset is empty", path.display())));
            }
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("dataset{i}"));
            let (train, test) = data::cap_and_split(
                &examples,
                config.data.cap,
                config.data.train_fraction,
                derive_seed(config.seed, &[0x5e1, i as u64]),
            )?;
            all.extend(examples);
            datasets.push(DatasetSplit { name, train, test });
        }
        let ctx = BuildContext {
            answer_key: Arc::new(AnswerKey::from_examples(&all)),
        };
        let pool = reg.backends.build_pool(&config.models, &ctx)?;
        let evaluator = reg.evaluators.get(&config.evaluator)?;
        let env = Environment::new(pool, evaluator, config.reward, config.episode.clone())?;
        let encoder = reg.embedders.build(&config.encoder)?;
        Ok(Runtime {
            config,
            env,
            encoder,
            datasets,
        })
    }

    pub fn train_set(&self) -> Vec<Example> {
        self.datasets.iter().flat_map(|d| d.train.iter().cloned()).collect()
    }

    pub fn init_params(&self) -> PolicyParameters {
        PolicyParameters::init(self.config.policy_dims(), derive_seed(self.config.seed, &[0x1a17]))
    }
}
