//! Batch normalization state and the standalone (non-recording) evaluator.
//!
//! The recording version used during training lives on [`crate::autodiff::Tape::batch_norm`];
//! both share the statistics update implemented here.

use serde::{Deserialize, Serialize};

use crate::tensor::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BnMode {
    Training,
    Inference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub channel_count: usize,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
    pub mode: BnMode,
}

impl BatchNormState {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    pub fn new(channel_count: usize) -> Self {
        Self {
            channel_count,
            running_mean: vec![0.0; channel_count],
            running_var: vec![1.0; channel_count],
            momentum: Self::DEFAULT_MOMENTUM,
            epsilon: Self::DEFAULT_EPSILON,
            mode: BnMode::Training,
        }
    }

    pub fn with_mode(mut self, mode: BnMode) -> Self {
        self.mode = mode;
        self
    }

    /// Per-channel batch mean and population variance of an `n × c` matrix.
    pub(crate) fn batch_stats(data: &[f64], n: usize, c: usize) -> (Vec<f64>, Vec<f64>) {
        let mut mean = vec![0.0; c];
        for row in data.chunks_exact(c) {
            mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; c];
        for row in data.chunks_exact(c) {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        (mean, var)
    }

    pub(crate) fn update_running(&mut self, mean: &[f64], var: &[f64]) {
        let k = self.momentum;
        for ch in 0..self.channel_count {
            self.running_mean[ch] = (1.0 - k) * self.running_mean[ch] + k * mean[ch];
            self.running_var[ch] = ((1.0 - k) * self.running_var[ch] + k * var[ch]).max(0.0);
        }
    }

    pub(crate) fn check(&self, n: usize, c: usize, gamma: &[f64], beta: &[f64]) -> Result<()> {
        if c != self.channel_count || gamma.len() != c || beta.len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm",
                left: vec![n, c],
                right: vec![self.channel_count],
            });
        }
        if self.mode == BnMode::Training && n < 2 {
            return Err(TensorError::BatchTooSmall(n));
        }
        Ok(())
    }
}

/// `1 / sqrt(max(var, eps))`; the guard only engages for (near-)constant channels.
pub(crate) fn inv_std(var: f64, eps: f64) -> f64 {
    1.0 / var.max(eps).sqrt()
}

/// Normalizes an `n × channels` matrix and applies the affine `gamma`, `beta`.
/// Training mode also folds the batch statistics into the running estimates.
pub fn batch_norm(
    x: &Tensor,
    state: &mut BatchNormState,
    gamma: &[f64],
    beta: &[f64],
) -> Result<Tensor> {
    let (n, c) = x.dims2();
    state.check(n, c, gamma, beta)?;
    let (mean, var) = match state.mode {
        BnMode::Training => {
            let (m, v) = BatchNormState::batch_stats(x.data(), n, c);
            state.update_running(&m, &v);
            (m, v)
        }
        BnMode::Inference => (state.running_mean.clone(), state.running_var.clone()),
    };
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(c) {
        for ch in 0..c {
            let xhat = (row[ch] - mean[ch]) * inv_std(var[ch], state.epsilon);
            row[ch] = gamma[ch] * xhat + beta[ch];
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}
