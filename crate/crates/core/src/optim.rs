//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::tensor::{Result, TensorError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamStore, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }
}

/// One Adam update of every parameter in `params` from `grads`.
pub fn adam_step(params: &mut ParamStore, grads: &[Vec<f64>], state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(TensorError::Invalid(format!(
            "adam: {} gradients / {} moment slots for {} parameters",
            grads.len(),
            state.first.len(),
            params.len()
        )));
    }
    for ((t, g), m) in params.tensors_mut().iter().zip(grads).zip(&state.first) {
        if t.numel() != g.len() || t.numel() != m.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                left: t.shape().to_vec(),
                right: vec![g.len()],
            });
        }
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (((t, g), m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        for (((w, &g), m), v) in t.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *w -= state.learning_rate * mhat / (vhat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}
