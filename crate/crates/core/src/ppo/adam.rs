use crate::error::{Error, Result};
use crate::policy::PolicyParameters;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;

/// First/second moment accumulators for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    opt: &mut AdamState,
    params: &mut PolicyParameters,
    grads: &PolicyParameters,
    lr: f64,
    eps: f64,
) -> Result<()> {
    let n = params.len();
    if grads.dims() != params.dims() || opt.m.len() != n || opt.v.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "adam: params {n}, grads {}, moments {}",
            grads.len(),
            opt.m.len()
        )));
    }
    opt.step += 1;
    let t = opt.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (((p, g), m), v) in params
        .as_mut_slice()
        .iter_mut()
        .zip(grads.as_slice())
        .zip(opt.m.iter_mut())
        .zip(opt.v.iter_mut())
    {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
