//! Similarity graph reasoning.
//!
//! Nodes are the alignment vectors of one pair, fully connected with
//! self-loops. Each step computes directed edge weights
//! `e(p, q) = softmax_q((W_in s_p) · (W_out s_q))`, aggregates
//! `ŝ_p = Σ_q e(p, q) s_q` and updates `s_p ← ReLU(W_r ŝ_p)`. Every step has
//! its own `W_in`, `W_out`, `W_r`. The score reads out the global node (or the
//! node mean when there is no global node) through an affine layer and a
//! sigmoid.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Tape, Var};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepParams {
    pub w_in: ParamId,
    pub w_out: ParamId,
    pub w_r: ParamId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgrParams {
    pub steps: Vec<StepParams>,
    /// `[1 × m]`
    pub head_w: ParamId,
    /// `[1 × 1]`
    pub head_b: ParamId,
}

/// How the reasoned graph is reduced before the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Readout {
    /// The last row, i.e. the global node.
    Global,
    /// Mean over all final nodes (local-only ablation).
    Mean,
}

impl SgrParams {
    pub fn init(store: &mut ParamStore, init: &mut Init, m: usize, steps: usize) -> Self {
        let steps = (0..steps)
            .map(|n| StepParams {
                w_in: store.add(format!("sgr.{n}.w_in"), init.fan_in(&[m, m])),
                w_out: store.add(format!("sgr.{n}.w_out"), init.fan_in(&[m, m])),
                w_r: store.add(format!("sgr.{n}.w_r"), init.fan_in(&[m, m])),
            })
            .collect();
        Self {
            steps,
            head_w: store.add("sgr.head_w", init.fan_in(&[1, m])),
            head_b: store.add("sgr.head_b", init.bias(1, m)),
        }
    }

    pub fn step_count(&self) -> usize {
        self.steps.len()
    }
}

/// Row-stochastic edge matrix `[P × P]` for nodes `[P × m]`.
pub fn edge_weights(tape: &mut Tape, nodes: Var, w_in: Var, w_out: Var) -> Result<Var> {
    let incoming = tape.matmul_nt(nodes, w_in)?;
    let outgoing = tape.matmul_nt(nodes, w_out)?;
    let logits = tape.matmul_nt(incoming, outgoing)?;
    Ok(tape.softmax(logits, Axis::Cols))
}

/// One reasoning step; returns the updated nodes and the edge matrix used.
pub fn graph_step(tape: &mut Tape, nodes: Var, w_in: Var, w_out: Var, w_r: Var) -> Result<(Var, Var)> {
    let edges = edge_weights(tape, nodes, w_in, w_out)?;
    let aggregated = tape.matmul(edges, nodes)?;
    let updated = tape.matmul_nt(aggregated, w_r)?;
    Ok((tape.relu(updated), edges))
}

/// Per-step intermediates of a reasoning pass.
#[derive(Debug, Clone)]
pub struct SgrTrace {
    pub edges: Vec<Var>,
    pub states: Vec<Var>,
    pub reasoned: Var,
    pub score: Var,
}

/// Runs all steps and the sigmoid head; the score is `[1 × 1]` in (0, 1).
pub fn sgr_score(tape: &mut Tape, bound: &Bound, params: &SgrParams, nodes: Var, readout: Readout) -> Result<SgrTrace> {
    if params.steps.is_empty() {
        return Err(TensorError::Invalid("graph reasoning needs at least one step".into()));
    }
    let mut state = nodes;
    let mut edges = Vec::with_capacity(params.steps.len());
    let mut states = vec![nodes];
    for step in &params.steps {
        let (next, e) = graph_step(tape, state, bound.var(step.w_in), bound.var(step.w_out), bound.var(step.w_r))?;
        edges.push(e);
        states.push(next);
        state = next;
    }
    let reasoned = match readout {
        Readout::Global => {
            let last = tape.value(state).rows() - 1;
            tape.row(state, last)?
        }
        Readout::Mean => tape.mean_rows(state),
    };
    let logit = tape.matmul_nt(reasoned, bound.var(params.head_w))?;
    let logit = tape.add(logit, bound.var(params.head_b))?;
    let score = tape.sigmoid(logit);
    Ok(SgrTrace {
        edges,
        states,
        reasoned,
        score,
    })
}

/// Node matrix at a given reasoning step, for step-by-step evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphState {
    pub nodes: Tensor,
    pub step: usize,
}

impl GraphState {
    pub fn new(nodes: Tensor) -> Self {
        Self { nodes, step: 0 }
    }

    /// Applies step `self.step` of `params`.
    pub fn advance(&self, store: &ParamStore, params: &SgrParams) -> Result<GraphState> {
        let step = params.steps.get(self.step).ok_or_else(|| {
            TensorError::Invalid(format!(
                "graph step {} requested but only {} steps are configured",
                self.step,
                params.steps.len()
            ))
        })?;
        let nodes = crate::autodiff::eval(|t| {
            let n = t.constant(self.nodes.clone());
            let (a, b, c) = (
                t.constant(store.get(step.w_in).clone()),
                t.constant(store.get(step.w_out).clone()),
                t.constant(store.get(step.w_r).clone()),
            );
            Ok(graph_step(t, n, a, b, c)?.0)
        })?;
        Ok(GraphState {
            nodes,
            step: self.step + 1,
        })
    }
}
