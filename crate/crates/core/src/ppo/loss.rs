use std::cell::RefCell;

use super::{buffer::Minibatch, PpoConfig};
use crate::error::{Error, Result};
use crate::policy::{ForwardCache, PolicyParameters, SampleGrad, SampleLoss};

/// Batch-mean diagnostics of one loss evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossStats {
    pub policy_loss: f64,
    /// Mean squared value error (before the coefficient).
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    /// Largest `|ratio - 1|` seen in the batch.
    pub max_ratio_deviation: f64,
}

/// Clipped-surrogate PPO objective with value and entropy terms:
/// `-mean(min(r A, clip(r, 1-e, 1+e) A)) + c_v mean((V - R)^2) - c_e mean(H)`.
pub struct PpoLoss<'a> {
    batch: &'a Minibatch,
    clip: f64,
    value_coef: f64,
    entropy_coef: f64,
    stats: RefCell<LossStats>,
}

impl<'a> PpoLoss<'a> {
    pub fn new(batch: &'a Minibatch, cfg: &PpoConfig) -> Self {
        PpoLoss {
            batch,
            clip: cfg.clip,
            value_coef: cfg.value_coef,
            entropy_coef: cfg.entropy_coef,
            stats: RefCell::new(LossStats::default()),
        }
    }

    pub fn stats(&self) -> LossStats {
        *self.stats.borrow()
    }
}

fn finite(term: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteLoss { term, value })
    }
}

impl SampleLoss for PpoLoss<'_> {
    fn sample_loss(&self, i: usize, logits: &[f64], value: f64) -> Result<SampleGrad> {
        let n = self.batch.len() as f64;
        let action = self.batch.actions[i];
        let adv = self.batch.advantages[i];
        let ret = self.batch.returns[i];

        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
        let logp: Vec<f64> = logits.iter().map(|l| l - lse).collect();
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let entropy = finite("entropy", -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>())?;

        let ratio = finite("ratio", (logp[action] - self.batch.old_log_probs[i]).exp())?;
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - self.clip, 1.0 + self.clip) * adv;
        let policy_term = finite("policy", -unclipped.min(clipped))?;
        // the clipped branch is constant in the parameters
        let dlogp = if unclipped <= clipped { -unclipped } else { 0.0 };

        let err = value - ret;
        let value_term = finite("value", self.value_coef * err * err)?;

        let dlogits = probs
            .iter()
            .zip(&logp)
            .enumerate()
            .map(|(j, (p, lp))| {
                let onehot = if j == action { 1.0 } else { 0.0 };
                (dlogp * (onehot - p) + self.entropy_coef * p * (lp + entropy)) / n
            })
            .collect();

        let mut s = self.stats.borrow_mut();
        s.policy_loss += policy_term / n;
        s.value_loss += err * err / n;
        s.entropy += entropy / n;
        let dev = (ratio - 1.0).abs();
        if dev > self.clip {
            s.clip_fraction += 1.0 / n;
        }
        s.max_ratio_deviation = s.max_ratio_deviation.max(dev);

        Ok(SampleGrad {
            loss: (policy_term + value_term - self.entropy_coef * entropy) / n,
            dlogits,
            dvalue: 2.0 * self.value_coef * err / n,
        })
    }
}

/// Evaluates the PPO loss on a minibatch without computing gradients.
pub fn ppo_loss(
    params: &PolicyParameters,
    batch: &Minibatch,
    cfg: &PpoConfig,
) -> Result<(f64, LossStats)> {
    if batch.is_empty() {
        return Err(Error::ShapeMismatch("empty minibatch".into()));
    }
    let loss = PpoLoss::new(batch, cfg);
    let mut total = 0.0;
    for (i, f) in batch.features.iter().enumerate() {
        let cache = ForwardCache::compute(params, f)?;
        total += loss.sample_loss(i, &cache.logits, cache.value)?.loss;
    }
    Ok((finite("total", total)?, loss.stats()))
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut PolicyParameters, max_norm: f64) -> f64 {
    let norm = grads.l2_norm();
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.as_mut_slice().iter_mut().for_each(|g| *g *= scale);
    }
    norm
}
