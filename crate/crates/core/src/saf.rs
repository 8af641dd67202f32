//! Similarity attention filtration.
//!
//! Each node gets a significance `β_p = σ(BN(W_f s_p)) / Σ_q σ(BN(W_f s_q))`
//! within its own pair; the weighted sum `s_f = Σ β_p s_p` goes through an
//! affine layer and a sigmoid. During training the batch norm sees the nodes
//! of every pair in the minibatch at once (see [`crate::config::BnPooling`]).

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::batchnorm::BatchNormState;
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafParams {
    /// `[1 × m]`
    pub w_filter: ParamId,
    /// Batch-norm affine, `[1 × 1]` each.
    pub bn_gamma: ParamId,
    pub bn_beta: ParamId,
    /// `[1 × m]`
    pub head_w: ParamId,
    /// `[1 × 1]`
    pub head_b: ParamId,
}

impl SafParams {
    pub fn init(store: &mut ParamStore, init: &mut Init, m: usize) -> Self {
        Self {
            w_filter: store.add("saf.w_filter", init.fan_in(&[1, m])),
            bn_gamma: store.add("saf.bn_gamma", Tensor::matrix(1, 1, vec![1.0])),
            bn_beta: store.add("saf.bn_beta", Tensor::matrix(1, 1, vec![0.0])),
            head_w: store.add("saf.head_w", init.fan_in(&[1, m])),
            head_b: store.add("saf.head_b", init.bias(1, m)),
        }
    }
}

/// Filter pre-activations `W_f s_p`, `[P × 1]`.
pub fn preactivations(tape: &mut Tape, nodes: Var, w_filter: Var) -> Result<Var> {
    tape.matmul_nt(nodes, w_filter)
}

/// Turns normalized pre-activations `[P × 1]` of one pair into `β` `[P × 1]`.
pub fn significance(tape: &mut Tape, normalized: Var) -> Result<Var> {
    let gate = tape.sigmoid(normalized);
    let total = tape.sum(gate);
    tape.div_scalar(gate, total)
}

/// `β` `[P × 1]`, aggregated `s_f` `[1 × m]` and the score `[1 × 1]`.
#[derive(Debug, Clone, Copy)]
pub struct SafOutput {
    pub beta: Var,
    pub aggregated: Var,
    pub score: Var,
}

/// Weighted aggregation and head, given `β` for `nodes`.
pub fn aggregate_and_score(tape: &mut Tape, bound: &Bound, params: &SafParams, nodes: Var, beta: Var) -> Result<SafOutput> {
    let aggregated = tape.matmul_tn(beta, nodes)?;
    let logit = tape.matmul_nt(aggregated, bound.var(params.head_w))?;
    let logit = tape.add(logit, bound.var(params.head_b))?;
    let score = tape.sigmoid(logit);
    Ok(SafOutput {
        beta,
        aggregated,
        score,
    })
}

/// Filters the node sets of several pairs together.
///
/// With `pool_batch`, one batch-norm call normalizes the pre-activations of
/// all pairs' nodes jointly; otherwise each pair is normalized on its own
/// (which in training mode needs at least two nodes per pair).
pub fn saf_batch(
    tape: &mut Tape,
    bound: &Bound,
    params: &SafParams,
    node_sets: &[Var],
    bn: &mut BatchNormState,
    pool_batch: bool,
) -> Result<Vec<SafOutput>> {
    if node_sets.is_empty() {
        return Ok(Vec::new());
    }
    let (gamma, beta) = (bound.var(params.bn_gamma), bound.var(params.bn_beta));
    let pre: Vec<Var> = node_sets
        .iter()
        .map(|&n| preactivations(tape, n, bound.var(params.w_filter)))
        .collect::<Result<_>>()?;
    let normalized: Vec<Var> = if pool_batch {
        let all = tape.concat_rows(&pre)?;
        let normed = tape.batch_norm(all, gamma, beta, bn)?;
        let mut off = 0;
        pre.iter()
            .map(|&p| {
                let n = tape.value(p).rows();
                let s = tape.slice_rows(normed, off, off + n);
                off += n;
                s
            })
            .collect::<Result<_>>()?
    } else {
        pre.iter()
            .map(|&p| tape.batch_norm(p, gamma, beta, bn))
            .collect::<Result<_>>()?
    };
    node_sets
        .iter()
        .zip(normalized)
        .map(|(&nodes, norm)| {
            let b = significance(tape, norm)?;
            aggregate_and_score(tape, bound, params, nodes, b)
        })
        .collect()
}

/// Filtration of a single pair.
pub fn saf_score(tape: &mut Tape, bound: &Bound, params: &SafParams, nodes: Var, bn: &mut BatchNormState) -> Result<SafOutput> {
    if tape.value(nodes).rows() == 0 {
        return Err(TensorError::Invalid("empty node set".into()));
    }
    Ok(saf_batch(tape, bound, params, &[nodes], bn, true)?.remove(0))
}
