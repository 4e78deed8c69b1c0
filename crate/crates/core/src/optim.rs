//! AdamW with decoupled weight decay and linear warmup.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: u64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        Self { lr: 1e-3, weight_decay: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, warmup_steps: 0 }
    }
}

impl AdamWHyper {
    /// Learning rate at `step` (1-based) after linear warmup.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.lr
        } else {
            self.lr * step as f64 / self.warmup_steps as f64
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self { m: ModelParams::zeros(params.dims), v: ModelParams::zeros(params.dims) }
    }
}

/// One AdamW update of a flat parameter array.
///
/// Weight decay is applied to the parameter directly (`θ ← θ·(1 − lr·wd)`),
/// separately from the bias-corrected moment step.
pub fn adamw_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    hyper: &AdamWHyper,
    step: u64,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || m.len() != n || v.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "params {n}, grads {}, m {}, v {}",
            grads.len(),
            m.len(),
            v.len()
        )));
    }
    if step == 0 {
        return Err(Error::ConfigInvalid("optimizer steps are 1-based".into()));
    }
    let lr = hyper.lr_at(step);
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    let c1 = 1.0 - b1.powi(step.min(i32::MAX as u64) as i32);
    let c2 = 1.0 - b2.powi(step.min(i32::MAX as u64) as i32);
    let decay = 1.0 - lr * hyper.weight_decay;
    for i in 0..n {
        let g = grads[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] *= decay;
        params[i] -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
    Ok(())
}

/// Applies [`adamw_update`] to every parameter array.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    hyper: &AdamWHyper,
    step: u64,
) -> Result<()> {
    if grads.dims != params.dims || state.m.dims != params.dims || state.v.dims != params.dims {
        return Err(Error::ShapeMismatch("gradient or optimizer state dims differ from params".into()));
    }
    let g = grads.arrays();
    let AdamState { m, v } = state;
    for (((p, g), m), v) in params.arrays_mut().into_iter().zip(g).zip(m.arrays_mut()).zip(v.arrays_mut()) {
        adamw_update(p, g, m, v, hyper, step)?;
    }
    Ok(())
}
