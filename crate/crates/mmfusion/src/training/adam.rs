//! Adam with bias correction over a parameter registry.

use crate::error::{Error, Result};
use crate::params::ModelParameters;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates, aligned with the registry order.
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub t: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ModelParameters) -> AdamState {
        AdamState {
            m: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            v: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// One bias-corrected update over every registered parameter; gradients
/// are zeroed afterwards.
pub fn adam_step(params: &ModelParameters, state: &mut AdamState, lr: f64) -> Result<()> {
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for (pi, (name, tensor)) in params.iter().enumerate() {
        let grad = tensor
            .grad()
            .ok_or_else(|| Error::Contract(format!("parameter {name} has no gradient")))?;
        if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient {bad} in parameter {name}"
            )));
        }
        let mut data = tensor.data();
        let (m, v) = (&mut state.m[pi], &mut state.v[pi]);
        for i in 0..data.len() {
            let g = grad[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
        tensor.set_data(data)?;
        tensor.zero_grad();
    }
    Ok(())
}
