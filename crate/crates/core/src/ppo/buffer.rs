use rand::seq::SliceRandom;
use rand::RngCore;

use super::compute_gae;
use crate::encoder::StateFeatures;
use crate::env::Trajectory;
use crate::error::{Error, Result};

/// Per-step rollout storage. Each episode occupies a contiguous range.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub features: Vec<StateFeatures>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub old_log_probs: Vec<f64>,
    pub old_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub episode_starts: Vec<usize>,
}

/// Training view of a subset of buffer steps.
#[derive(Debug, Clone, Default)]
pub struct Minibatch {
    pub features: Vec<StateFeatures>,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Appends an episode recorded by `Environment::run_episode`.
    pub fn push_trajectory(
        &mut self,
        traj: &Trajectory,
        pool_size: usize,
        halting: bool,
    ) -> Result<()> {
        self.episode_starts.push(self.len());
        for t in &traj.transitions {
            let features = t.features.clone().ok_or_else(|| {
                Error::ShapeMismatch("transition without policy features".into())
            })?;
            self.features.push(features);
            self.actions.push(t.action.to_index(pool_size, halting));
            self.rewards.push(t.reward);
            self.dones.push(t.done);
            self.old_log_probs.push(t.log_prob);
            self.old_values.push(t.value_estimate);
        }
        Ok(())
    }

    /// Fills `advantages` and `returns`.
    pub fn finish(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        let (adv, ret) = compute_gae(&self.rewards, &self.old_values, &self.dones, gamma, lambda)?;
        self.advantages = adv;
        self.returns = ret;
        Ok(())
    }

    pub fn minibatch(&self, indices: &[usize]) -> Minibatch {
        Minibatch {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            actions: indices.iter().map(|&i| self.actions[i]).collect(),
            old_log_probs: indices.iter().map(|&i| self.old_log_probs[i]).collect(),
            advantages: indices.iter().map(|&i| self.advantages[i]).collect(),
            returns: indices.iter().map(|&i| self.returns[i]).collect(),
        }
    }
}

/// Standardizes to zero mean and unit variance (population std + 1e-8).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

/// Shuffles `0..n` and splits it into `parts` nearly equal chunks; the
/// remainder joins the final chunk. Empty chunks are dropped.
pub fn partition_minibatches(n: usize, parts: usize, rng: &mut dyn RngCore) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let parts = parts.max(1);
    let size = n / parts;
    if size == 0 {
        return idx.into_iter().map(|i| vec![i]).collect();
    }
    let mut out: Vec<Vec<usize>> = idx.chunks(size).map(<[usize]>::to_vec).collect();
    while out.len() > parts {
        let extra = out.pop().unwrap();
        out.last_mut().unwrap().extend(extra);
    }
    out
}
