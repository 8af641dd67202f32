//! Brute-force reference implementations and random instances shared by the
//! integration tests. Everything here works on nested `Vec`s with explicit
//! loops so it shares no code with the library's tensor kernels.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sgraf::Tensor;

pub mod checks;

pub type Mat = Vec<Vec<f64>>;

pub const EPS: f64 = 1e-8;

pub fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    (0..r).map(|_| (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

pub fn to_tensor(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

pub fn from_tensor(t: &Tensor) -> Mat {
    let c = t.cols();
    t.data().chunks(c).map(<[f64]>::to_vec).collect()
}

pub fn max_diff(a: &Mat, b: &Tensor) -> f64 {
    assert_eq!((a.len(), a[0].len()), (b.rows(), b.cols()), "shape");
    a.iter()
        .flatten()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `W x` for `W` `[r × c]`.
fn apply(w: &Mat, x: &[f64]) -> Vec<f64> {
    w.iter().map(|row| dot(row, x)).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// `W|x − y|²` scaled to unit length.
pub fn similarity_vector(x: &[f64], y: &[f64], w: &Mat) -> Vec<f64> {
    let sq: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).collect();
    let p = apply(w, &sq);
    let n = norm(&p).max(EPS);
    p.iter().map(|v| v / n).collect()
}

/// Row-stochastic edges `e_pq ∝ exp((W_in s_p) · (W_out s_q))`.
pub fn edge_weights(s: &Mat, w_in: &Mat, w_out: &Mat) -> Mat {
    let a: Mat = s.iter().map(|r| apply(w_in, r)).collect();
    let b: Mat = s.iter().map(|r| apply(w_out, r)).collect();
    a.iter()
        .map(|ap| softmax(&b.iter().map(|bq| dot(ap, bq)).collect::<Vec<_>>()))
        .collect()
}

/// `relu(W_r Σ_q e_pq s_q)` per node.
pub fn graph_step(s: &Mat, w_in: &Mat, w_out: &Mat, w_r: &Mat) -> Mat {
    let e = edge_weights(s, w_in, w_out);
    let m = s[0].len();
    e.iter()
        .map(|ep| {
            let mut agg = vec![0.0; m];
            for (q, w) in ep.iter().enumerate() {
                for k in 0..m {
                    agg[k] += w * s[q][k];
                }
            }
            apply(w_r, &agg).into_iter().map(|v| v.max(0.0)).collect()
        })
        .collect()
}

/// Each query item attends over the context items.
///
/// Returns the weights `[n_context × n_query]` and the attended rows
/// `[n_query × d]`. With `per_context` the rectified cosines are normalized
/// across queries for each context item; otherwise across context items for
/// each query.
pub fn cross_attend(context: &Mat, query: &Mat, lambda: f64, per_context: bool) -> (Mat, Mat) {
    let (nc, nq) = (context.len(), query.len());
    let mut rect = vec![vec![0.0; nq]; nc];
    for i in 0..nc {
        for j in 0..nq {
            let c = dot(&context[i], &query[j]) / (norm(&context[i]).max(EPS) * norm(&query[j]).max(EPS));
            rect[i][j] = c.max(0.0);
        }
    }
    let mut normed = rect.clone();
    if per_context {
        for i in 0..nc {
            let n = norm(&rect[i]).max(EPS);
            for j in 0..nq {
                normed[i][j] = rect[i][j] / n;
            }
        }
    } else {
        for j in 0..nq {
            let col: Vec<f64> = (0..nc).map(|i| rect[i][j]).collect();
            let n = norm(&col).max(EPS);
            for i in 0..nc {
                normed[i][j] = rect[i][j] / n;
            }
        }
    }
    let mut weights = vec![vec![0.0; nq]; nc];
    let mut attended = vec![vec![0.0; context[0].len()]; nq];
    for j in 0..nq {
        let col: Vec<f64> = (0..nc).map(|i| lambda * normed[i][j]).collect();
        let a = softmax(&col);
        for i in 0..nc {
            weights[i][j] = a[i];
            for k in 0..context[0].len() {
                attended[j][k] += a[i] * context[i][k];
            }
        }
    }
    (weights, attended)
}

/// Filtration weights of several pairs with a batch norm pooled over all
/// their nodes (training statistics, `1 / sqrt(max(var, eps))`).
pub fn saf_weights(sets: &[Mat], w_f: &[f64], gamma: f64, beta: f64) -> Vec<Vec<f64>> {
    let pre: Vec<Vec<f64>> = sets.iter().map(|s| s.iter().map(|r| dot(w_f, r)).collect()).collect();
    let all: Vec<f64> = pre.iter().flatten().cloned().collect();
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let var = all.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv = 1.0 / var.max(EPS).sqrt();
    pre.iter()
        .map(|p| {
            let g: Vec<f64> = p.iter().map(|x| sigmoid(gamma * (x - mean) * inv + beta)).collect();
            let s: f64 = g.iter().sum();
            g.iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Additive pooling queried by the row mean. Returns `(pooled, weights)`.
pub fn attention_pool(x: &Mat, w_local: &Mat, w_query: &Mat, score: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = x[0].len();
    let q: Vec<f64> = (0..d).map(|k| x.iter().map(|r| r[k]).sum::<f64>() / x.len() as f64).collect();
    let qp = apply(w_query, &q);
    let scores: Vec<f64> = x
        .iter()
        .map(|r| {
            let h: Vec<f64> = apply(w_local, r).iter().zip(&qp).map(|(a, b)| (a + b).tanh()).collect();
            dot(score, &h)
        })
        .collect();
    let w = softmax(&scores);
    let pooled = (0..d).map(|k| x.iter().zip(&w).map(|(r, a)| a * r[k]).sum()).collect();
    (pooled, w)
}

/// One GRU direction, gates (r, z, n), zero initial state.
pub struct Gru {
    pub w_input: [Mat; 3],
    pub w_hidden: [Mat; 3],
    pub b_input: [Vec<f64>; 3],
    pub b_hidden: [Vec<f64>; 3],
}

impl Gru {
    pub fn random(rng: &mut ChaCha8Rng, embed: usize, d: usize) -> Self {
        let mut m = |r, c| rand_mat(rng, r, c);
        let w_input = [m(d, embed), m(d, embed), m(d, embed)];
        let w_hidden = [m(d, d), m(d, d), m(d, d)];
        let b_input = [m(1, d).remove(0), m(1, d).remove(0), m(1, d).remove(0)];
        let b_hidden = [m(1, d).remove(0), m(1, d).remove(0), m(1, d).remove(0)];
        Self { w_input, w_hidden, b_input, b_hidden }
    }

    fn cell(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let d = h.len();
        let lin = |g: usize| -> (Vec<f64>, Vec<f64>) {
            let xi = apply(&self.w_input[g], x);
            let hh = apply(&self.w_hidden[g], h);
            (
                (0..d).map(|k| xi[k] + self.b_input[g][k]).collect(),
                (0..d).map(|k| hh[k] + self.b_hidden[g][k]).collect(),
            )
        };
        let (xr, hr) = lin(0);
        let (xz, hz) = lin(1);
        let (xn, hn) = lin(2);
        (0..d)
            .map(|k| {
                let r = sigmoid(xr[k] + hr[k]);
                let z = sigmoid(xz[k] + hz[k]);
                let n = (xn[k] + r * hn[k]).tanh();
                (1.0 - z) * n + z * h[k]
            })
            .collect()
    }

    pub fn run(&self, xs: &Mat, reverse: bool) -> Mat {
        let d = self.w_hidden[0].len();
        let mut h = vec![0.0; d];
        let mut out = vec![Vec::new(); xs.len()];
        let order: Vec<usize> = if reverse { (0..xs.len()).rev().collect() } else { (0..xs.len()).collect() };
        for t in order {
            h = self.cell(&xs[t], &h);
            out[t] = h.clone();
        }
        out
    }
}

/// Mean of the forward and backward hidden states per position.
pub fn bigru(xs: &Mat, fwd: &Gru, bwd: &Gru) -> Mat {
    let f = fwd.run(xs, false);
    let b = bwd.run(xs, true);
    f.iter().zip(&b).map(|(a, c)| a.iter().zip(c).map(|(x, y)| 0.5 * (x + y)).collect()).collect()
}

/// Hardest-negative hinge loss with a dense score matrix (image rows, text
/// columns, caption `i` belongs to image `i`), averaged over the batch.
pub fn ranking_loss(s: &Mat, margin: f64) -> f64 {
    let b = s.len();
    let mut total = 0.0;
    for i in 0..b {
        let mut hard_t = f64::NEG_INFINITY;
        let mut hard_i = f64::NEG_INFINITY;
        for j in 0..b {
            if j != i {
                hard_t = hard_t.max(s[i][j]);
                hard_i = hard_i.max(s[j][i]);
            }
        }
        total += (margin - s[i][i] + hard_t).max(0.0) + (margin - s[i][i] + hard_i).max(0.0);
    }
    total / b as f64
}
