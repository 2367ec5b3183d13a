//! Exact backpropagation for the fixed policy/value architecture.

use super::{clamp_logits, Block, PolicyParameters, LOGIT_CLAMP};
use crate::encoder::StateFeatures;
use crate::error::{Error, Result};

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub depth: usize,
    pub input: Vec<f64>,
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub z2: Vec<f64>,
    pub a2: Vec<f64>,
    pub raw_logits: Vec<f64>,
    pub logits: Vec<f64>,
    pub value: f64,
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(i, bi)| {
            let row = &w[i * n_in..(i + 1) * n_in];
            bi + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|v| v.max(0.0)).collect()
}

impl ForwardCache {
    pub fn compute(params: &PolicyParameters, features: &StateFeatures) -> Result<Self> {
        let input = params.input_for(features)?;
        let z1 = affine(params.block(Block::TrunkW1), params.block(Block::TrunkB1), &input);
        let a1 = relu(&z1);
        let z2 = affine(params.block(Block::TrunkW2), params.block(Block::TrunkB2), &a1);
        let a2 = relu(&z2);
        let raw_logits = affine(params.block(Block::LogitW), params.block(Block::LogitB), &a2);
        let value = affine(params.block(Block::ValueW), params.block(Block::ValueB), &a2)[0];
        let logits = clamp_logits(&raw_logits)?;
        if !value.is_finite() {
            return Err(Error::NonFiniteValue("value head output".into()));
        }
        Ok(ForwardCache {
            depth: features.depth,
            input,
            z1,
            a1,
            z2,
            a2,
            raw_logits,
            logits,
            value,
        })
    }

    /// Accumulates parameter gradients given dL/d(clamped logits) and dL/dvalue.
    pub fn backward(
        &self,
        params: &PolicyParameters,
        dlogits: &[f64],
        dvalue: f64,
        grads: &mut PolicyParameters,
    ) {
        let dims = params.dims();
        let (h, n_in, d) = (dims.hidden, dims.input_len(), dims.embed_dim);

        // clamp passes gradient only strictly inside the interval
        let draw: Vec<f64> = dlogits
            .iter()
            .zip(&self.raw_logits)
            .map(|(g, r)| if r.abs() < LOGIT_CLAMP { *g } else { 0.0 })
            .collect();

        let wp = params.block(Block::LogitW);
        let wv = params.block(Block::ValueW);
        let mut da2 = vec![0.0; h];
        for (k, g) in draw.iter().enumerate() {
            for j in 0..h {
                da2[j] += wp[k * h + j] * g;
            }
        }
        for j in 0..h {
            da2[j] += wv[j] * dvalue;
        }
        {
            let gwp = grads.block_mut(Block::LogitW);
            for (k, g) in draw.iter().enumerate() {
                for j in 0..h {
                    gwp[k * h + j] += g * self.a2[j];
                }
            }
        }
        for (gb, g) in grads.block_mut(Block::LogitB).iter_mut().zip(&draw) {
            *gb += g;
        }
        for (gw, a) in grads.block_mut(Block::ValueW).iter_mut().zip(&self.a2) {
            *gw += dvalue * a;
        }
        grads.block_mut(Block::ValueB)[0] += dvalue;

        let dz2: Vec<f64> = da2
            .iter()
            .zip(&self.z2)
            .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
            .collect();
        let w2 = params.block(Block::TrunkW2);
        let mut da1 = vec![0.0; h];
        {
            let gw2 = grads.block_mut(Block::TrunkW2);
            for (i, g) in dz2.iter().enumerate() {
                for j in 0..h {
                    gw2[i * h + j] += g * self.a1[j];
                    da1[j] += w2[i * h + j] * g;
                }
            }
        }
        for (gb, g) in grads.block_mut(Block::TrunkB2).iter_mut().zip(&dz2) {
            *gb += g;
        }

        let dz1: Vec<f64> = da1
            .iter()
            .zip(&self.z1)
            .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
            .collect();
        let w1 = params.block(Block::TrunkW1);
        let mut dstage = vec![0.0; d];
        {
            let gw1 = grads.block_mut(Block::TrunkW1);
            for (i, g) in dz1.iter().enumerate() {
                if *g == 0.0 {
                    continue;
                }
                for j in 0..n_in {
                    gw1[i * n_in + j] += g * self.input[j];
                }
                for (s, w) in dstage.iter_mut().zip(&w1[i * n_in + d..i * n_in + 2 * d]) {
                    *s += w * g;
                }
            }
        }
        for (gb, g) in grads.block_mut(Block::TrunkB1).iter_mut().zip(&dz1) {
            *gb += g;
        }
        let row = self.depth * d;
        for (gs, g) in grads.block_mut(Block::StageTable)[row..row + d]
            .iter_mut()
            .zip(&dstage)
        {
            *gs += g;
        }
    }
}

/// Per-sample loss term and its derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrad {
    pub loss: f64,
    pub dlogits: Vec<f64>,
    pub dvalue: f64,
}

/// A scalar loss that decomposes as a sum over batch samples.
pub trait SampleLoss {
    /// Loss of sample `index` given the clamped logits and value for its state.
    fn sample_loss(&self, index: usize, logits: &[f64], value: f64) -> Result<SampleGrad>;
}

/// Summed loss over `batch` and its gradient with respect to every parameter.
pub fn gradients(
    params: &PolicyParameters,
    batch: &[StateFeatures],
    loss: &dyn SampleLoss,
) -> Result<(f64, PolicyParameters)> {
    if batch.is_empty() {
        return Err(Error::ShapeMismatch("empty minibatch".into()));
    }
    let mut grads = PolicyParameters::zeros(params.dims());
    let mut total = 0.0;
    for (i, features) in batch.iter().enumerate() {
        let cache = ForwardCache::compute(params, features)?;
        let g = loss.sample_loss(i, &cache.logits, cache.value)?;
        if g.dlogits.len() != cache.logits.len() {
            return Err(Error::ShapeMismatch(format!(
                "loss returned {} logit grads for {} actions",
                g.dlogits.len(),
                cache.logits.len()
            )));
        }
        total += g.loss;
        cache.backward(params, &g.dlogits, g.dvalue, &mut grads);
    }
    Ok((total, grads))
}
