//! Vector similarity representations and the alignment node set.
//!
//! `s(x, y; W) = W|x − y|² / ‖W|x − y|²‖₂` turns a pair of feature vectors
//! into an m-dimensional similarity vector. The global alignment compares the
//! pooled image and sentence vectors; each local alignment compares one
//! attending item with the context features it attends to.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Tape, Var};
use crate::config::{Direction, NormAxis};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::{Result, Tensor, TensorError};

/// Guard for every vanishing denominator.
pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityParams {
    /// `[m × d]`
    pub w_global: ParamId,
    /// `[m × d]`
    pub w_local: ParamId,
}

impl SimilarityParams {
    pub fn init(store: &mut ParamStore, init: &mut Init, m: usize, d: usize) -> Self {
        Self {
            w_global: store.add("sim.w_global", init.fan_in(&[m, d])),
            w_local: store.add("sim.w_local", init.fan_in(&[m, d])),
        }
    }
}

/// Intermediate products of one cross-attention pass.
#[derive(Debug, Clone, Copy)]
pub struct AttentionMap {
    /// Cosines `[n_context × n_query]`.
    pub cosines: Var,
    /// Rectified, ℓ2-normalized cosines, same shape.
    pub normalized: Var,
    /// Softmax weights over context items; every column sums to 1.
    pub weights: Var,
    /// Attended context per query item `[n_query × d]`.
    pub attended: Var,
}

/// Row-wise `s(x_r, y_r; W)` for `[n × d]` inputs; returns `[n × m]`.
pub fn similarity_vector(tape: &mut Tape, x: Var, y: Var, w: Var) -> Result<Var> {
    let diff = tape.sub(x, y)?;
    let sq = tape.square(diff);
    let proj = tape.matmul_nt(sq, w)?;
    Ok(tape.l2_normalize_rows(proj, EPS))
}

/// Row-wise cosine `[n × d] × [n × d] → [n × 1]`, the scalar-similarity ablation.
pub fn cosine_rows(tape: &mut Tape, x: Var, y: Var) -> Result<Var> {
    let xn = tape.l2_normalize_rows(x, EPS);
    let yn = tape.l2_normalize_rows(y, EPS);
    let prod = tape.mul(xn, yn)?;
    let d = tape.value(x).cols();
    let ones = tape.constant(Tensor::matrix(d, 1, vec![1.0; d]));
    tape.matmul(prod, ones)
}

/// Global alignment `s(v̄, t̄; W_g)`.
pub fn global_similarity(tape: &mut Tape, image: Var, text: Var, w_global: Var) -> Result<Var> {
    similarity_vector(tape, image, text, w_global)
}

/// Temperature cross-attention of `queries` over `context`, both given
/// already row-normalized (`*_unit`) alongside the raw context rows.
pub fn cross_attend_prenormalized(
    tape: &mut Tape,
    context: Var,
    context_unit: Var,
    query_unit: Var,
    lambda: f64,
    axis: NormAxis,
) -> Result<AttentionMap> {
    let cosines = tape.matmul_nt(context_unit, query_unit)?;
    let rect = tape.relu(cosines);
    let normalized = match axis {
        NormAxis::Queries => tape.l2_normalize_rows(rect, EPS),
        NormAxis::Context => {
            let t = tape.transpose(rect);
            let n = tape.l2_normalize_rows(t, EPS);
            tape.transpose(n)
        }
    };
    let logits = tape.scale(normalized, lambda);
    let weights = tape.softmax(logits, Axis::Rows);
    let attended = tape.matmul_tn(weights, context)?;
    Ok(AttentionMap {
        cosines,
        normalized,
        weights,
        attended,
    })
}

/// Cross-attention between regions `[K × d]` and words `[L × d]`.
///
/// Under [`Direction::T2I`] each word attends over the regions (the map is
/// `K × L` and `attended` holds one row per word); [`Direction::I2T`] swaps
/// the roles.
pub fn cross_attend(
    tape: &mut Tape,
    regions: Var,
    words: Var,
    lambda: f64,
    direction: Direction,
    axis: NormAxis,
) -> Result<AttentionMap> {
    let (context, query) = match direction {
        Direction::T2I => (regions, words),
        Direction::I2T => (words, regions),
    };
    if tape.value(context).cols() != tape.value(query).cols() {
        return Err(TensorError::ShapeMismatch {
            op: "cross_attend",
            left: tape.value(context).shape().to_vec(),
            right: tape.value(query).shape().to_vec(),
        });
    }
    let cu = tape.l2_normalize_rows(context, EPS);
    let qu = tape.l2_normalize_rows(query, EPS);
    cross_attend_prenormalized(tape, context, cu, qu, lambda, axis)
}

/// Row `j` is `s(attended_j, anchors_j; W_l)`.
pub fn local_similarities(tape: &mut Tape, attended: Var, anchors: Var, w_local: Var) -> Result<Var> {
    if tape.value(attended).shape() != tape.value(anchors).shape() {
        return Err(TensorError::ShapeMismatch {
            op: "local_similarities",
            left: tape.value(attended).shape().to_vec(),
            right: tape.value(anchors).shape().to_vec(),
        });
    }
    similarity_vector(tape, attended, anchors, w_local)
}

/// Stacks local alignments (in order) followed by the global one.
pub fn build_nodes(tape: &mut Tape, locals: Option<Var>, global: Option<Var>) -> Result<Var> {
    match (locals, global) {
        (Some(l), Some(g)) => tape.concat_rows(&[l, g]),
        (Some(l), None) => Ok(l),
        (None, Some(g)) => Ok(g),
        (None, None) => Err(TensorError::Invalid("node set needs local or global alignments".into())),
    }
}

/// A concrete node set: local rows first, the global row (if any) last.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityNodes {
    stacked: Tensor,
    local_count: usize,
    has_global: bool,
}

impl SimilarityNodes {
    pub fn new(locals: Option<&Tensor>, global: Option<&Tensor>) -> Result<Self> {
        let stacked = crate::autodiff::eval(|t| {
            let l = locals.map(|x| t.constant(x.clone()));
            let g = global.map(|x| t.constant(x.clone()));
            build_nodes(t, l, g)
        })?;
        Ok(Self {
            local_count: locals.map_or(0, Tensor::rows),
            has_global: global.is_some(),
            stacked,
        })
    }

    pub fn from_stacked(stacked: Tensor, has_global: bool) -> Self {
        let local_count = stacked.rows() - usize::from(has_global);
        Self {
            stacked,
            local_count,
            has_global,
        }
    }

    pub fn stacked(&self) -> &Tensor {
        &self.stacked
    }

    pub fn len(&self) -> usize {
        self.stacked.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn local_count(&self) -> usize {
        self.local_count
    }

    pub fn has_global(&self) -> bool {
        self.has_global
    }

    pub fn locals(&self) -> Option<Tensor> {
        (self.local_count > 0).then(|| {
            let c = self.stacked.cols();
            Tensor::matrix(self.local_count, c, self.stacked.data()[..self.local_count * c].to_vec())
        })
    }

    pub fn global(&self) -> Option<Tensor> {
        self.has_global
            .then(|| Tensor::row(self.stacked.row_slice(self.local_count).to_vec()))
    }
}

/// One side of a pair as seen by the node builder: local rows, the same rows
/// ℓ2-normalized, and the pooled vector.
#[derive(Debug, Clone, Copy)]
pub struct Side {
    pub locals: Var,
    pub unit: Var,
    pub global: Var,
}

impl Side {
    pub fn new(tape: &mut Tape, locals: Var, global: Var) -> Self {
        let unit = tape.l2_normalize_rows(locals, EPS);
        Self { locals, unit, global }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NodeOptions {
    pub lambda: f64,
    pub direction: Direction,
    pub norm_axis: NormAxis,
    pub scalar: bool,
    pub use_global: bool,
    pub use_local: bool,
    /// Compare ℓ2-normalized features: local rows, attended rows and the
    /// pooled vectors are each scaled to unit length before the similarity
    /// functions see them.
    pub normalize: bool,
}

/// Node set of one image-text pair: local alignments, then the global one.
pub fn pair_nodes(
    tape: &mut Tape,
    bound: &Bound,
    params: &SimilarityParams,
    image: &Side,
    text: &Side,
    opts: &NodeOptions,
) -> Result<Var> {
    let global = if opts.use_global {
        let (gi, gt) = if opts.normalize {
            (tape.l2_normalize_rows(image.global, EPS), tape.l2_normalize_rows(text.global, EPS))
        } else {
            (image.global, text.global)
        };
        Some(if opts.scalar {
            cosine_rows(tape, gi, gt)?
        } else {
            global_similarity(tape, gi, gt, bound.var(params.w_global))?
        })
    } else {
        None
    };
    let locals = if opts.use_local {
        let (context, query) = match opts.direction {
            Direction::T2I => (image, text),
            Direction::I2T => (text, image),
        };
        let (values, anchors) = if opts.normalize {
            (context.unit, query.unit)
        } else {
            (context.locals, query.locals)
        };
        let map = cross_attend_prenormalized(tape, values, context.unit, query.unit, opts.lambda, opts.norm_axis)?;
        let attended = if opts.normalize {
            tape.l2_normalize_rows(map.attended, EPS)
        } else {
            map.attended
        };
        Some(if opts.scalar {
            cosine_rows(tape, attended, anchors)?
        } else {
            local_similarities(tape, attended, anchors, bound.var(params.w_local))?
        })
    } else {
        None
    };
    build_nodes(tape, locals, global)
}
