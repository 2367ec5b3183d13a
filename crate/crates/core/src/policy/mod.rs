//! Shared policy/value network over state features.
//!
//! Architecture: `x (2d+1) -> relu(W1 x + b1) (h) -> relu(W2 . + b2) (h)`,
//! followed by an action-logit head (h -> A) and a scalar value head (h -> 1).
//! The stage-embedding table (L x d) is part of the trainable parameters.

mod checkpoint;
mod grad;

use std::ops::Range;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::StateFeatures;
use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use grad::{gradients, ForwardCache, SampleGrad, SampleLoss};

/// Logits are clamped to `[-LOGIT_CLAMP, LOGIT_CLAMP]` before any softmax.
pub const LOGIT_CLAMP: f64 = 20.0;

const STAGE_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDims {
    pub embed_dim: usize,
    pub hidden: usize,
    /// Number of actions: pool size, doubled when halting is enabled.
    pub actions: usize,
    /// Number of stage-table rows (the maximum hop count).
    pub stages: usize,
}

impl PolicyDims {
    pub fn input_len(&self) -> usize {
        2 * self.embed_dim + 1
    }

    fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden == 0 || self.actions == 0 || self.stages == 0 {
            return Err(Error::ShapeMismatch(format!("degenerate dims {self:?}")));
        }
        Ok(())
    }
}

/// Named parameter blocks, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    StageTable,
    TrunkW1,
    TrunkB1,
    TrunkW2,
    TrunkB2,
    LogitW,
    LogitB,
    ValueW,
    ValueB,
}

impl Block {
    pub const ALL: [Block; 9] = [
        Block::StageTable,
        Block::TrunkW1,
        Block::TrunkB1,
        Block::TrunkW2,
        Block::TrunkB2,
        Block::LogitW,
        Block::LogitB,
        Block::ValueW,
        Block::ValueB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::StageTable => "stage_table",
            Block::TrunkW1 => "trunk_w1",
            Block::TrunkB1 => "trunk_b1",
            Block::TrunkW2 => "trunk_w2",
            Block::TrunkB2 => "trunk_b2",
            Block::LogitW => "logit_w",
            Block::LogitB => "logit_b",
            Block::ValueW => "value_w",
            Block::ValueB => "value_b",
        }
    }

    fn len(self, d: &PolicyDims) -> usize {
        let h = d.hidden;
        match self {
            Block::StageTable => d.stages * d.embed_dim,
            Block::TrunkW1 => h * d.input_len(),
            Block::TrunkB1 | Block::TrunkB2 | Block::ValueW => h,
            Block::TrunkW2 => h * h,
            Block::LogitW => d.actions * h,
            Block::LogitB => d.actions,
            Block::ValueB => 1,
        }
    }
}

/// All trainable values, stored flat. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    dims: PolicyDims,
    values: Vec<f64>,
}

impl PolicyParameters {
    pub fn zeros(dims: PolicyDims) -> Self {
        let n = Block::ALL.iter().map(|b| b.len(&dims)).sum();
        PolicyParameters {
            dims,
            values: vec![0.0; n],
        }
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for affine layers, `N(0, 0.02)` for stage rows.
    pub fn init(dims: PolicyDims, seed: u64) -> Self {
        let mut p = PolicyParameters::zeros(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, STAGE_INIT_STD).expect("valid std");
        for x in p.block_mut(Block::StageTable) {
            *x = normal.sample(&mut rng);
        }
        let fan_in = |b: Block| match b {
            Block::TrunkW1 | Block::TrunkB1 => dims.input_len(),
            _ => dims.hidden,
        };
        for b in &Block::ALL[1..] {
            let bound = 1.0 / (fan_in(*b) as f64).sqrt();
            for x in p.block_mut(*b) {
                *x = rng.random_range(-bound..=bound);
            }
        }
        p
    }

    pub fn from_values(dims: PolicyDims, values: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        let p = PolicyParameters::zeros(dims);
        if p.values.len() != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values, got {}",
                p.values.len(),
                values.len()
            )));
        }
        Ok(PolicyParameters { dims, values })
    }

    pub fn dims(&self) -> PolicyDims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn range(&self, block: Block) -> Range<usize> {
        let mut start = 0;
        for b in Block::ALL {
            let len = b.len(&self.dims);
            if b == block {
                return start..start + len;
            }
            start += len;
        }
        unreachable!()
    }

    pub fn block(&self, block: Block) -> &[f64] {
        &self.values[self.range(block)]
    }

    pub fn block_mut(&mut self, block: Block) -> &mut [f64] {
        let r = self.range(block);
        &mut self.values[r]
    }

    pub fn stage_row(&self, depth: usize) -> Option<&[f64]> {
        let d = self.dims.embed_dim;
        (depth < self.dims.stages).then(|| &self.block(Block::StageTable)[depth * d..(depth + 1) * d])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Assembles the network input, reading the stage block from these parameters.
    pub(crate) fn input_for(&self, features: &StateFeatures) -> Result<Vec<f64>> {
        let d = self.dims.embed_dim;
        if features.vector.len() != self.dims.input_len() {
            return Err(Error::ShapeMismatch(format!(
                "feature length {} != {}",
                features.vector.len(),
                self.dims.input_len()
            )));
        }
        let stage = self.stage_row(features.depth).ok_or(Error::DepthOutOfRange {
            depth: features.depth,
            max_hops: self.dims.stages,
        })?;
        let mut x = features.vector.clone();
        x[d..2 * d].copy_from_slice(stage);
        Ok(x)
    }
}

/// Network outputs for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    /// Clamped action logits.
    pub logits: Vec<f64>,
    pub value: f64,
}

/// Deterministic forward pass. The stage block of `features` is re-read from
/// `params`, so features built under older parameters stay consistent.
pub fn forward(params: &PolicyParameters, features: &StateFeatures) -> Result<PolicyOutput> {
    let cache = ForwardCache::compute(params, features)?;
    Ok(PolicyOutput {
        logits: cache.logits,
        value: cache.value,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    #[default]
    Stochastic,
    Greedy,
}

pub(crate) fn clamp_logits(logits: &[f64]) -> Result<Vec<f64>> {
    logits
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if l.is_finite() {
                Ok(l.clamp(-LOGIT_CLAMP, LOGIT_CLAMP))
            } else {
                Err(Error::NonFiniteLogit(i))
            }
        })
        .collect()
}

fn log_softmax(clamped: &[f64]) -> Vec<f64> {
    let max = clamped.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = clamped.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    clamped.iter().map(|l| l - lse).collect()
}

/// Numerically stable softmax over clamped logits.
pub fn action_distribution(logits: &[f64]) -> Result<ActionDistribution> {
    let clamped = clamp_logits(logits)?;
    let max = clamped.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = clamped.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(ActionDistribution {
        probs: exps.into_iter().map(|e| e / total).collect(),
    })
}

/// Inverse-CDF draw, or argmax with lowest-index tie-break.
pub fn sample(dist: &ActionDistribution, rng: &mut dyn RngCore, mode: SampleMode) -> usize {
    match mode {
        SampleMode::Greedy => {
            let mut best = 0;
            for (i, &p) in dist.probs.iter().enumerate() {
                if p > dist.probs[best] {
                    best = i;
                }
            }
            best
        }
        SampleMode::Stochastic => {
            let u: f64 = rng.random();
            let mut cum = 0.0;
            for (i, &p) in dist.probs.iter().enumerate() {
                cum += p;
                if u < cum {
                    return i;
                }
            }
            // rounding left u above the final cumulative sum
            dist.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
        }
    }
}

/// Log-probability of `action` and the entropy of the distribution.
pub fn log_prob_entropy(logits: &[f64], action: usize) -> Result<(f64, f64)> {
    if action >= logits.len() {
        return Err(Error::IndexOutOfRange {
            index: action,
            len: logits.len(),
        });
    }
    let logp = log_softmax(&clamp_logits(logits)?);
    let entropy = -logp.iter().map(|lp| lp.exp() * lp).sum::<f64>();
    Ok((logp[action], entropy))
}
