//! Proximal policy optimization with generalized advantage estimation.

mod adam;
mod buffer;
mod gae;
mod loss;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2};
pub use buffer::{normalize_advantages, partition_minibatches, Minibatch, RolloutBuffer};
pub use gae::compute_gae;
pub use loss::{clip_grad_norm, ppo_loss, LossStats, PpoLoss};
pub use train::{train, MetricsRow, TrainOptions, TrainReport, UpdateRecord, METRICS_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    Cosine,
}

fn d_gamma() -> f64 {
    0.99
}
fn d_lambda() -> f64 {
    0.95
}
fn d_clip() -> f64 {
    0.2
}
fn d_value_coef() -> f64 {
    0.5
}
fn d_entropy_coef() -> f64 {
    0.01
}
fn d_max_grad_norm() -> f64 {
    0.3
}
fn d_lr() -> f64 {
    1e-4
}
fn d_adam_eps() -> f64 {
    1e-4
}
fn d_iterations() -> usize {
    8
}
fn d_rollouts() -> usize {
    128
}
fn d_minibatches() -> usize {
    16
}
fn d_epochs() -> usize {
    4
}
fn d_seed() -> u64 {
    42
}
fn d_true() -> bool {
    true
}

/// Optimizer and algorithm constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoConfig {
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default = "d_clip")]
    pub clip: f64,
    #[serde(default = "d_value_coef")]
    pub value_coef: f64,
    #[serde(default = "d_entropy_coef")]
    pub entropy_coef: f64,
    #[serde(default = "d_max_grad_norm")]
    pub max_grad_norm: f64,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "d_iterations")]
    pub iterations: usize,
    #[serde(default = "d_rollouts")]
    pub rollouts_per_iter: usize,
    #[serde(default = "d_minibatches")]
    pub minibatches: usize,
    #[serde(default = "d_epochs")]
    pub epochs_per_iter: usize,
    /// Set from the enclosing run configuration.
    #[serde(skip, default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_true")]
    pub advantage_norm: bool,
    /// Optional symmetric clip applied to advantages after normalization.
    #[serde(default)]
    pub advantage_clip: Option<f64>,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: d_gamma(),
            lambda: d_lambda(),
            clip: d_clip(),
            value_coef: d_value_coef(),
            entropy_coef: d_entropy_coef(),
            max_grad_norm: d_max_grad_norm(),
            lr: d_lr(),
            adam_eps: d_adam_eps(),
            iterations: d_iterations(),
            rollouts_per_iter: d_rollouts(),
            minibatches: d_minibatches(),
            epochs_per_iter: d_epochs(),
            seed: d_seed(),
            advantage_norm: true,
            advantage_clip: None,
            lr_schedule: LrSchedule::Constant,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("ppo.{name} must be in (0, 1], got {v}")))
            }
        };
        unit("gamma", self.gamma)?;
        unit("lambda", self.lambda)?;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("ppo.{name} must be positive, got {v}")))
            }
        };
        positive("clip", self.clip)?;
        positive("max_grad_norm", self.max_grad_norm)?;
        positive("lr", self.lr)?;
        positive("adam_eps", self.adam_eps)?;
        if self.value_coef < 0.0 || self.entropy_coef < 0.0 {
            return Err(Error::Config("ppo loss coefficients must be >= 0".into()));
        }
        if self.rollouts_per_iter == 0 || self.minibatches == 0 || self.epochs_per_iter == 0 {
            return Err(Error::Config(
                "ppo.rollouts_per_iter, minibatches and epochs_per_iter must be >= 1".into(),
            ));
        }
        if let Some(c) = self.advantage_clip {
            positive("advantage_clip", c)?;
        }
        Ok(())
    }
}
