//! Adaptive-moment (Adam) updates over flat parameter buffers.

use serde::Serialize;

use crate::error::{EbrecError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment buffers and step count for one parameter buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            step: 0,
            first: vec![0.0; len],
            second: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam step applied in place.
///
/// The new parameters are computed into a scratch buffer first, so on error
/// (non-finite update) `params` is left untouched.
pub fn adaptive_update(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(EbrecError::contract(format!(
            "adam buffers disagree: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    let step = state.step + 1;
    let correction1 = 1.0 - cfg.beta1.powi(step as i32);
    let correction2 = 1.0 - cfg.beta2.powi(step as i32);
    let mut first = state.first.clone();
    let mut second = state.second.clone();
    let mut updated = params.to_vec();
    for k in 0..params.len() {
        let g = grads[k];
        first[k] = cfg.beta1 * first[k] + (1.0 - cfg.beta1) * g;
        second[k] = cfg.beta2 * second[k] + (1.0 - cfg.beta2) * g * g;
        let m_hat = first[k] / correction1;
        let v_hat = second[k] / correction2;
        updated[k] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        if !updated[k].is_finite() {
            return Err(EbrecError::non_finite(format!("adam update of coordinate {k}")));
        }
    }
    params.copy_from_slice(&updated);
    state.first = first;
    state.second = second;
    state.step = step;
    Ok(())
}
