//! The PPO training loop over simulated or remote rollouts.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::buffer::{normalize_advantages, partition_minibatches, RolloutBuffer};
use super::loss::{clip_grad_norm, PpoLoss};
use super::{adam_step, AdamState, LrSchedule, PpoConfig};
use crate::data::Example;
use crate::encoder::StateEncoder;
use crate::env::{Environment, Trajectory};
use crate::error::{Error, Result};
use crate::policy::{gradients, PolicyParameters, SampleMode};
use crate::seed::derive_seed;

pub const METRICS_HEADER: &str =
    "iter,mean_reward,mean_quality,mean_cost,policy_loss,value_loss,entropy,clip_fraction";

/// One row of the per-iteration metrics CSV.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MetricsRow {
    pub iter: usize,
    pub mean_reward: f64,
    pub mean_quality: f64,
    pub mean_cost: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iter,
            self.mean_reward,
            self.mean_quality,
            self.mean_cost,
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.clip_fraction
        )
    }

    pub fn to_csv(rows: &[MetricsRow]) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in rows {
            writeln!(out, "{}", r.csv_line()).unwrap();
        }
        out
    }
}

/// Diagnostics for one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateRecord {
    pub iter: usize,
    pub epoch: usize,
    pub minibatch: usize,
    pub grad_norm: f64,
    pub clipped_grad_norm: f64,
    pub clip_fraction: f64,
    pub max_ratio_deviation: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: PolicyParameters,
    pub metrics: Vec<MetricsRow>,
    pub updates: Vec<UpdateRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrainOptions {
    /// Collect rollouts on the rayon pool. Per-episode RNG streams make the
    /// result identical to the sequential path.
    pub parallel: bool,
}

fn collect_rollouts(
    env: &Environment,
    encoder: &StateEncoder,
    params: &PolicyParameters,
    queries: &[&Example],
    seed: u64,
    iter: usize,
    parallel: bool,
) -> Result<Vec<Trajectory>> {
    let run = |(i, ex): (usize, &&Example)| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[iter as u64, i as u64]));
        env.run_episode(
            &ex.query,
            Some(&ex.answers),
            params,
            encoder,
            &mut rng,
            SampleMode::Stochastic,
        )
    };
    if parallel {
        queries.par_iter().enumerate().map(run).collect()
    } else {
        queries.iter().enumerate().map(run).collect()
    }
}

fn learning_rate(cfg: &PpoConfig, update: usize, total: usize) -> f64 {
    match cfg.lr_schedule {
        LrSchedule::Constant => cfg.lr,
        LrSchedule::Cosine => {
            let progress = update as f64 / total.max(1) as f64;
            cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

/// Trains `params` with PPO on episodes drawn from `train_set`.
pub fn train(
    env: &Environment,
    encoder: &StateEncoder,
    train_set: &[Example],
    mut params: PolicyParameters,
    cfg: &PpoConfig,
    opts: TrainOptions,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut env = env.clone();
    env.require_gold = true;
    let pool_size = env.pool.len();
    let halting = env.episode.halting_enabled;

    let mut opt = AdamState::new(params.len());
    let mut metrics = Vec::with_capacity(cfg.iterations);
    let mut updates = Vec::new();
    let total_updates = cfg.iterations * cfg.epochs_per_iter * cfg.minibatches;

    for iter in 0..cfg.iterations {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[iter as u64]));
        let queries: Vec<&Example> = (0..cfg.rollouts_per_iter)
            .map(|_| &train_set[rng.random_range(0..train_set.len())])
            .collect();
        let trajectories =
            collect_rollouts(&env, encoder, &params, &queries, cfg.seed, iter, opts.parallel)?;

        let mut buffer = RolloutBuffer::default();
        for t in &trajectories {
            buffer.push_trajectory(t, pool_size, halting)?;
        }
        buffer.finish(cfg.gamma, cfg.lambda)?;
        if cfg.advantage_norm {
            normalize_advantages(&mut buffer.advantages);
        }
        if let Some(c) = cfg.advantage_clip {
            buffer.advantages.iter_mut().for_each(|a| *a = a.clamp(-c, c));
        }

        let mut acc = [0.0f64; 4];
        let mut n_updates = 0usize;
        for epoch in 0..cfg.epochs_per_iter {
            let parts = partition_minibatches(buffer.len(), cfg.minibatches, &mut rng);
            for (mb_index, indices) in parts.iter().enumerate() {
                let batch = buffer.minibatch(indices);
                let loss = PpoLoss::new(&batch, cfg);
                let (_, mut grads) = gradients(&params, &batch.features, &loss)?;
                let stats = loss.stats();
                let grad_norm = clip_grad_norm(&mut grads, cfg.max_grad_norm);
                if !grad_norm.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        term: "gradient",
                        value: grad_norm,
                    });
                }
                let lr = learning_rate(cfg, updates.len(), total_updates);
                adam_step(&mut opt, &mut params, &grads, lr, cfg.adam_eps)?;
                if !params.is_finite() {
                    return Err(Error::NonFiniteValue(format!(
                        "parameters after update {} of iteration {iter}",
                        updates.len()
                    )));
                }
                updates.push(UpdateRecord {
                    iter,
                    epoch,
                    minibatch: mb_index,
                    grad_norm,
                    clipped_grad_norm: grads.l2_norm(),
                    clip_fraction: stats.clip_fraction,
                    max_ratio_deviation: stats.max_ratio_deviation,
                    lr,
                });
                acc[0] += stats.policy_loss;
                acc[1] += stats.value_loss;
                acc[2] += stats.entropy;
                acc[3] += stats.clip_fraction;
                n_updates += 1;
            }
        }

        let n = trajectories.len() as f64;
        let k = n_updates.max(1) as f64;
        metrics.push(MetricsRow {
            iter,
            mean_reward: trajectories.iter().map(|t| t.final_reward).sum::<f64>() / n,
            mean_quality: trajectories
                .iter()
                .map(|t| t.final_quality.unwrap_or(0.0))
                .sum::<f64>()
                / n,
            mean_cost: trajectories.iter().map(|t| t.final_cost).sum::<f64>() / n,
            policy_loss: acc[0] / k,
            value_loss: acc[1] / k,
            entropy: acc[2] / k,
            clip_fraction: acc[3] / k,
        });
    }
    Ok(TrainReport {
        params,
        metrics,
        updates,
    })
}
