//! Local and global feature extraction for both modalities.
//!
//! Images: raw region features go through one affine layer, then an additive
//! self-attention pool (queried by the mean region) yields the global vector.
//! Captions: token embeddings feed a bidirectional GRU whose forward and
//! backward states are averaged per step; the same kind of pool gives the
//! global sentence vector.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Tape, Var};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tensor::{Result, Tensor, TensorError};

/// Region rows `[K × d]` and the pooled image vector `[1 × d]`.
#[derive(Debug, Clone, Copy)]
pub struct VisualFeatures {
    pub regions: Var,
    pub global: Var,
}

/// Word rows `[L × d]` and the pooled sentence vector `[1 × d]`.
#[derive(Debug, Clone, Copy)]
pub struct TextualFeatures {
    pub words: Var,
    pub global: Var,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolParams {
    /// `[hidden × d]` projection of each local row.
    pub w_local: ParamId,
    /// `[hidden × d]` projection of the mean query.
    pub w_query: ParamId,
    /// `[1 × hidden]` scoring vector.
    pub score: ParamId,
}

/// One GRU direction. Gate order everywhere is reset, update, candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    /// Input weights `[d × embed]` per gate.
    pub w_input: [ParamId; 3],
    /// Recurrent weights `[d × d]` per gate.
    pub w_hidden: [ParamId; 3],
    /// Input-side biases `[1 × d]` per gate.
    pub b_input: [ParamId; 3],
    /// Hidden-side biases `[1 × d]` per gate.
    pub b_hidden: [ParamId; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub region_w: ParamId,
    pub region_b: ParamId,
    pub embedding: ParamId,
    pub vocab_size: usize,
    /// Row used for ids outside the vocabulary; `None` makes them an error.
    pub unk: Option<usize>,
    pub gru_forward: GruParams,
    pub gru_backward: GruParams,
    pub image_pool: PoolParams,
    pub text_pool: PoolParams,
}

pub struct EncoderDims {
    pub d_raw: usize,
    pub hidden: usize,
    pub embed: usize,
    pub vocab: usize,
    pub attn_hidden: usize,
}

impl PoolParams {
    pub fn init(store: &mut ParamStore, init: &mut Init, prefix: &str, d: usize, hidden: usize) -> Self {
        Self {
            w_local: store.add(format!("{prefix}.w_local"), init.fan_in(&[hidden, d])),
            w_query: store.add(format!("{prefix}.w_query"), init.fan_in(&[hidden, d])),
            score: store.add(format!("{prefix}.score"), init.fan_in(&[1, hidden])),
        }
    }
}

impl GruParams {
    pub fn init(store: &mut ParamStore, init: &mut Init, prefix: &str, embed: usize, d: usize) -> Self {
        let gates = ["r", "z", "n"];
        let mut ids = |what: &str, shape: &[usize], fan: usize| {
            gates.map(|g| {
                let t = if shape[0] == 1 {
                    init.bias(shape[1], fan)
                } else {
                    init.uniform(shape, 1.0 / (fan as f64).sqrt())
                };
                store.add(format!("{prefix}.{what}_{g}"), t)
            })
        };
        // PyTorch-style: every GRU tensor uses the hidden width as fan-in
        Self {
            w_input: ids("w_input", &[d, embed], d),
            w_hidden: ids("w_hidden", &[d, d], d),
            b_input: ids("b_input", &[1, d], d),
            b_hidden: ids("b_hidden", &[1, d], d),
        }
    }
}

impl EncoderParams {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, dims: &EncoderDims) -> Self {
        let mut init = Init::new(rng);
        let d = dims.hidden;
        Self {
            region_w: store.add("enc.region_w", init.fan_in(&[d, dims.d_raw])),
            region_b: store.add("enc.region_b", init.bias(d, dims.d_raw)),
            embedding: store.add("enc.embedding", init.uniform(&[dims.vocab, dims.embed], 0.1)),
            vocab_size: dims.vocab,
            unk: Some(0),
            gru_forward: GruParams::init(store, &mut init, "enc.gru_fwd", dims.embed, d),
            gru_backward: GruParams::init(store, &mut init, "enc.gru_bwd", dims.embed, d),
            image_pool: PoolParams::init(store, &mut init, "enc.img_pool", d, dims.attn_hidden),
            text_pool: PoolParams::init(store, &mut init, "enc.txt_pool", d, dims.attn_hidden),
        }
    }

    pub fn encode_image(&self, tape: &mut Tape, bound: &Bound, raw: Var) -> Result<VisualFeatures> {
        let regions = project_regions(tape, raw, bound.var(self.region_w), bound.var(self.region_b))?;
        let (global, _) = attention_pool(tape, regions, &self.image_pool.bind(bound))?;
        Ok(VisualFeatures { regions, global })
    }

    pub fn encode_text(&self, tape: &mut Tape, bound: &Bound, ids: &[usize]) -> Result<TextualFeatures> {
        let emb = embed_tokens(tape, bound.var(self.embedding), ids, self.unk)?;
        let words = bigru_encode(
            tape,
            emb,
            &self.gru_forward.bind(bound),
            &self.gru_backward.bind(bound),
        )?;
        let (global, _) = attention_pool(tape, words, &self.text_pool.bind(bound))?;
        Ok(TextualFeatures {
            words,
            global,
            len: ids.len(),
        })
    }
}

/// Tape handles of a [`PoolParams`].
#[derive(Debug, Clone, Copy)]
pub struct PoolVars {
    pub w_local: Var,
    pub w_query: Var,
    pub score: Var,
}

impl PoolParams {
    pub fn bind(&self, b: &Bound) -> PoolVars {
        PoolVars {
            w_local: b.var(self.w_local),
            w_query: b.var(self.w_query),
            score: b.var(self.score),
        }
    }
}

/// Tape handles of a [`GruParams`].
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_input: [Var; 3],
    pub w_hidden: [Var; 3],
    pub b_input: [Var; 3],
    pub b_hidden: [Var; 3],
}

impl GruParams {
    pub fn bind(&self, b: &Bound) -> GruVars {
        GruVars {
            w_input: self.w_input.map(|p| b.var(p)),
            w_hidden: self.w_hidden.map(|p| b.var(p)),
            b_input: self.b_input.map(|p| b.var(p)),
            b_hidden: self.b_hidden.map(|p| b.var(p)),
        }
    }
}

/// Row-wise affine map `raw · Wᵀ + b`: `[K × d_raw] → [K × d]`.
pub fn project_regions(tape: &mut Tape, raw: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul_nt(raw, w)?;
    tape.add_row(y, b)
}

/// Additive self-attention pooling queried by the row mean.
///
/// `score_i = w · tanh(W_local x_i + W_query q)`, `q = mean(x)`; returns the
/// softmax-weighted sum of rows `[1 × d]` and the weights `[n × 1]`.
pub fn attention_pool(tape: &mut Tape, locals: Var, p: &PoolVars) -> Result<(Var, Var)> {
    let q = tape.mean_rows(locals);
    let proj_local = tape.matmul_nt(locals, p.w_local)?;
    let proj_query = tape.matmul_nt(q, p.w_query)?;
    let pre = tape.add_row(proj_local, proj_query)?;
    let act = tape.tanh(pre);
    let scores = tape.matmul_nt(act, p.score)?;
    let weights = tape.softmax(scores, Axis::Rows);
    let pooled = tape.matmul_tn(weights, locals)?;
    Ok((pooled, weights))
}

/// Embedding lookup; ids at or beyond the table size fall back to `unk`.
pub fn embed_tokens(tape: &mut Tape, table: Var, ids: &[usize], unk: Option<usize>) -> Result<Var> {
    if ids.is_empty() {
        return Err(TensorError::Invalid("empty token sequence".into()));
    }
    let vocab = tape.value(table).rows();
    let rows = ids
        .iter()
        .map(|&id| match (id < vocab, unk) {
            (true, _) => Ok(id),
            (false, Some(u)) => Ok(u),
            (false, None) => Err(TensorError::IndexOutOfRange {
                op: "embed_tokens",
                index: id,
                extent: vocab,
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    tape.gather_rows(table, &rows)
}

/// Runs one GRU direction over `[L × embed]` inputs from a zero state.
/// Returns the hidden state after each input, in input order.
pub fn gru_run(tape: &mut Tape, inputs: Var, p: &GruVars, reverse: bool) -> Result<Vec<Var>> {
    let len = tape.value(inputs).rows();
    let d = tape.value(p.w_hidden[0]).rows();
    // input-side projections for all steps at once
    let mut proj = [inputs; 3];
    for g in 0..3 {
        let xw = tape.matmul_nt(inputs, p.w_input[g])?;
        proj[g] = tape.add_row(xw, p.b_input[g])?;
    }
    let mut h = tape.constant(Tensor::zeros(vec![1, d]));
    let mut states = vec![h; len];
    let order: Vec<usize> = if reverse { (0..len).rev().collect() } else { (0..len).collect() };
    for t in order {
        let mut hid = [h; 3];
        for g in 0..3 {
            let hw = tape.matmul_nt(h, p.w_hidden[g])?;
            hid[g] = tape.add_row(hw, p.b_hidden[g])?;
        }
        let xr = tape.row(proj[0], t)?;
        let xz = tape.row(proj[1], t)?;
        let xn = tape.row(proj[2], t)?;
        let r_pre = tape.add(xr, hid[0])?;
        let r = tape.sigmoid(r_pre);
        let z_pre = tape.add(xz, hid[1])?;
        let z = tape.sigmoid(z_pre);
        let gated = tape.mul(r, hid[2])?;
        let n_pre = tape.add(xn, gated)?;
        let n = tape.tanh(n_pre);
        // h' = (1 - z) ⊙ n + z ⊙ h = n + z ⊙ (h - n)
        let diff = tape.sub(h, n)?;
        let zd = tape.mul(z, diff)?;
        h = tape.add(n, zd)?;
        states[t] = h;
    }
    Ok(states)
}

/// Bidirectional GRU: `t_j = (h_fwd_j + h_bwd_j) / 2`, `[L × embed] → [L × d]`.
pub fn bigru_encode(tape: &mut Tape, embeddings: Var, fwd: &GruVars, bwd: &GruVars) -> Result<Var> {
    let e = tape.value(embeddings).cols();
    let we = tape.value(fwd.w_input[0]).cols();
    if e != we {
        return Err(TensorError::ShapeMismatch {
            op: "bigru_encode",
            left: tape.value(embeddings).shape().to_vec(),
            right: tape.value(fwd.w_input[0]).shape().to_vec(),
        });
    }
    let hf = gru_run(tape, embeddings, fwd, false)?;
    let hb = gru_run(tape, embeddings, bwd, true)?;
    let f = tape.concat_rows(&hf)?;
    let b = tape.concat_rows(&hb)?;
    let s = tape.add(f, b)?;
    Ok(tape.scale(s, 0.5))
}
