use serde::{Deserialize, Serialize};

use super::{Gradients, Hyperparams, Result, SeqModelParams};

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: SeqModelParams,
    pub v: SeqModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &SeqModelParams) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut SeqModelParams, grads: &Gradients, state: &mut AdamState, hyper: &Hyperparams) -> Result<()> {
    params.check_shape(grads)?;
    params.check_shape(&state.m)?;
    params.check_shape(&state.v)?;
    state.step += 1;
    let (b1, b2) = (hyper.adam_beta1, hyper.adam_beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let (lr, eps) = (hyper.learning_rate, hyper.adam_eps);
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
    {
        for k in 0..p.len() {
            let gk = g[k];
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
