//! Reverse-mode differentiation over a recorded tape of dense tensor ops.
//!
//! Every op evaluates eagerly and appends a node; [`Tape::backward`] walks the
//! nodes in reverse and accumulates gradients into the slots of leaves that
//! were registered with `requires_grad`. Matrices are row-major and rank-1
//! tensors read as a single row.

use crate::batchnorm::{inv_std, BatchNormState, BnMode};
use crate::tensor::{dims2, matmul_raw, sigmoid, Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction axis for [`Tape::softmax`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Normalize down each column (over rows).
    Rows,
    /// Normalize along each row (over columns).
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Opaque(Vec<usize>),
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow { a: usize, row: usize },
    Scale(usize, f64),
    AddScalar(usize),
    DivScalar { a: usize, s: usize },
    Square(usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    L2NormRows { a: usize, eps: f64, norms: Vec<f64> },
    Softmax(usize, Axis),
    Sum(usize),
    Mean(usize),
    MeanRows(usize),
    Max { a: usize, at: usize },
    Gather { a: usize, idx: Vec<usize> },
    GatherRows { a: usize, idx: Vec<usize> },
    ConcatRows(Vec<usize>),
    SliceRows { a: usize, start: usize },
    Transpose(usize),
    Reshape(usize),
    BatchNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, inv: Vec<f64>, training: bool },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// Registers a leaf; gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.push(t, Op::Leaf, needs_grad)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad())
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(false);
        self.leaf(t)
    }

    /// Records a value computed outside the tape. Backward fails with
    /// [`TensorError::Unsupported`] if a gradient would have to cross it.
    pub fn opaque(&mut self, inputs: &[Var], value: Tensor) -> Var {
        let needs = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(value, Op::Opaque(inputs.iter().map(|v| v.0).collect()), needs)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, a: Var, value: Tensor, op: Op) -> Var {
        let needs = self.nodes[a.0].needs_grad;
        self.push(value, op, needs)
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor, op: Op) -> Var {
        let needs = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        self.push(value, op, needs)
    }

    fn v(&self, a: Var) -> &Tensor {
        &self.nodes[a.0].value
    }

    // ---- linear algebra ----------------------------------------------------

    fn matmul_impl(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (av, bv) = (self.v(a), self.v(b));
        let (ad, bd) = (av.dims2(), bv.dims2());
        let k1 = if ta { ad.0 } else { ad.1 };
        let k2 = if tb { bd.1 } else { bd.0 };
        if k1 != k2 {
            return Err(mismatch("matmul", av, bv));
        }
        let (out, m, n) = matmul_raw(av.data(), ad, ta, bv.data(), bd, tb);
        Ok(self.binary(a, b, Tensor::matrix(m, n, out), Op::MatMul { a: a.0, b: b.0, ta, tb }))
    }

    /// `a · b`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false, false)
    }

    /// `a · bᵀ`; with `b` an `out × in` weight this is a row-wise linear map.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false, true)
    }

    /// `aᵀ · b`
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true, false)
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (av, bv) = (self.v(a), self.v(b));
        if av.numel() != bv.numel() || av.dims2() != bv.dims2() {
            return Err(mismatch(name, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::from_vec(av.shape().to_vec(), data);
        Ok(self.binary(a, b, t, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a.0, b.0))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// Adds a `c`-vector to every row of an `n × c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.v(a), self.v(row));
        let (_, c) = av.dims2();
        if rv.numel() != c {
            return Err(mismatch("add_row", av, rv));
        }
        let mut data = av.data().to_vec();
        for r in data.chunks_exact_mut(c) {
            r.iter_mut().zip(rv.data()).for_each(|(x, b)| *x += b);
        }
        let t = Tensor::from_vec(av.shape().to_vec(), data);
        Ok(self.binary(a, row, t, Op::AddRow { a: a.0, row: row.0 }))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let t = self.v(a).scale(k);
        self.unary(a, t, Op::Scale(a.0, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let t = self.v(a).map(|x| x + k);
        self.unary(a, t, Op::AddScalar(a.0))
    }

    /// Divides every entry of `a` by the single-element `s`.
    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let (av, sv) = (self.v(a), self.v(s));
        if !sv.is_scalar() {
            return Err(mismatch("div_scalar", av, sv));
        }
        let d = sv.item();
        let t = av.map(|x| x / d);
        Ok(self.binary(a, s, t, Op::DivScalar { a: a.0, s: s.0 }))
    }

    // ---- element-wise nonlinearities ----------------------------------------

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.v(a).map(|x| x * x);
        self.unary(a, t, Op::Square(a.0))
    }

    /// `max(x, 0)`; the derivative at exactly 0 is taken as 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.v(a).map(|x| x.max(0.0));
        self.unary(a, t, Op::Relu(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.v(a).map(sigmoid);
        self.unary(a, t, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.v(a).map(f64::tanh);
        self.unary(a, t, Op::Tanh(a.0))
    }

    /// Divides each row by `max(‖row‖₂, eps)`.
    pub fn l2_normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let av = self.v(a);
        let (_, c) = av.dims2();
        let mut data = av.data().to_vec();
        let mut norms = Vec::with_capacity(data.len() / c);
        for r in data.chunks_exact_mut(c) {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            let d = n.max(eps);
            r.iter_mut().for_each(|x| *x /= d);
            norms.push(n);
        }
        let t = Tensor::from_vec(av.shape().to_vec(), data);
        self.unary(a, t, Op::L2NormRows { a: a.0, eps, norms })
    }

    pub fn softmax(&mut self, a: Var, axis: Axis) -> Var {
        let av = self.v(a);
        let (r, c) = av.dims2();
        let mut data = av.data().to_vec();
        match axis {
            Axis::Cols => {
                for row in data.chunks_exact_mut(c) {
                    softmax_in_place(row.iter_mut());
                }
            }
            Axis::Rows => {
                for j in 0..c {
                    softmax_in_place(data.iter_mut().skip(j).step_by(c).take(r));
                }
            }
        }
        let t = Tensor::from_vec(av.shape().to_vec(), data);
        self.unary(a, t, Op::Softmax(a.0, axis))
    }

    // ---- reductions ---------------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.v(a).data().iter().sum());
        self.unary(a, t, Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.v(a);
        let t = Tensor::scalar(av.data().iter().sum::<f64>() / av.numel() as f64);
        self.unary(a, t, Op::Mean(a.0))
    }

    /// Column means of an `n × c` matrix, as a `1 × c` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.v(a);
        let (r, c) = av.dims2();
        let mut out = vec![0.0; c];
        for row in av.data().chunks_exact(c) {
            out.iter_mut().zip(row).for_each(|(o, x)| *o += x);
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        self.unary(a, Tensor::row(out), Op::MeanRows(a.0))
    }

    /// Largest entry; the gradient goes to the first maximizer.
    pub fn max(&mut self, a: Var) -> Var {
        let av = self.v(a);
        let (at, m) = av
            .data()
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) });
        self.unary(a, Tensor::scalar(m), Op::Max { a: a.0, at })
    }

    // ---- indexing and layout ------------------------------------------------

    /// Picks flat entries by index into a `1 × idx.len()` row.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.v(a);
        let n = av.numel();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(TensorError::IndexOutOfRange { op: "gather", index: bad, extent: n });
        }
        let t = Tensor::row(idx.iter().map(|&i| av.data()[i]).collect());
        Ok(self.unary(a, t, Op::Gather { a: a.0, idx: idx.to_vec() }))
    }

    /// Row lookup, e.g. an embedding table.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.v(a);
        let (r, c) = av.dims2();
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(TensorError::IndexOutOfRange { op: "gather_rows", index: bad, extent: r });
        }
        if idx.is_empty() {
            return Err(TensorError::ZeroExtent(vec![0, c]));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(av.row_slice(i));
        }
        let t = Tensor::matrix(idx.len(), c, data);
        Ok(self.unary(a, t, Op::GatherRows { a: a.0, idx: idx.to_vec() }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(TensorError::ZeroExtent(vec![0]))?;
        let c = self.v(*first).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let pv = self.v(*p);
            if pv.cols() != c {
                return Err(mismatch("concat_rows", self.v(*first), pv));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let needs = parts.iter().any(|p| self.nodes[p.0].needs_grad);
        let t = Tensor::matrix(rows, c, data);
        Ok(self.push(t, Op::ConcatRows(parts.iter().map(|p| p.0).collect()), needs))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.v(a);
        let (r, c) = av.dims2();
        if start >= end || end > r {
            return Err(TensorError::IndexOutOfRange { op: "slice_rows", index: end, extent: r });
        }
        let t = Tensor::matrix(end - start, c, av.data()[start * c..end * c].to_vec());
        Ok(self.unary(a, t, Op::SliceRows { a: a.0, start }))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        self.slice_rows(a, r, r + 1)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.v(a).transpose();
        self.unary(a, t, Op::Transpose(a.0))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.v(a).clone().reshape(shape.to_vec())?;
        Ok(self.unary(a, t, Op::Reshape(a.0)))
    }

    // ---- normalization ------------------------------------------------------

    /// Batch normalization of an `n × c` matrix with learnable affine
    /// `gamma`, `beta` (each `c` entries). Training mode normalizes by the
    /// batch's population statistics and updates `state`'s running
    /// estimates; inference mode uses the running estimates.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, state: &mut BatchNormState) -> Result<Var> {
        let (xv, gv, bv) = (self.v(x), self.v(gamma), self.v(beta));
        let (n, c) = xv.dims2();
        state.check(n, c, gv.data(), bv.data())?;
        let training = state.mode == BnMode::Training;
        let (mean, var) = if training {
            let (m, v) = BatchNormState::batch_stats(xv.data(), n, c);
            state.update_running(&m, &v);
            (m, v)
        } else {
            (state.running_mean.clone(), state.running_var.clone())
        };
        let inv: Vec<f64> = var.iter().map(|&v| inv_std(v, state.epsilon)).collect();
        let mut xhat = xv.data().to_vec();
        for row in xhat.chunks_exact_mut(c) {
            for ch in 0..c {
                row[ch] = (row[ch] - mean[ch]) * inv[ch];
            }
        }
        let mut out = xhat.clone();
        for row in out.chunks_exact_mut(c) {
            for ch in 0..c {
                row[ch] = gv.data()[ch] * row[ch] + bv.data()[ch];
            }
        }
        // a clamped variance makes the scale constant w.r.t. x
        let inv_grad: Vec<f64> = var
            .iter()
            .zip(&inv)
            .map(|(&v, &i)| if v > state.epsilon { i } else { -i })
            .collect();
        let t = Tensor::from_vec(xv.shape().to_vec(), out);
        let needs = [x, gamma, beta].iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push(
            t,
            Op::BatchNorm { x: x.0, gamma: gamma.0, beta: beta.0, xhat, inv: inv_grad, training },
            needs,
        ))
    }

    // ---- backward -----------------------------------------------------------

    /// Accumulates d(root)/d(leaf) into every `requires_grad` leaf reachable
    /// from the scalar `root`. Repeated calls add to existing gradients.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let rv = self.v(root);
        if !rv.is_scalar() {
            return Err(TensorError::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                self.nodes[i].value.accumulate_grad(&g)?;
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = node.value.data();
        let val = |k: usize| &self.nodes[k].value;
        let wants = |k: usize| self.nodes[k].needs_grad;
        let send = |k: usize, d: Vec<f64>, grads: &mut [Option<Vec<f64>>]| {
            if !self.nodes[k].needs_grad {
                return;
            }
            match &mut grads[k] {
                Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Opaque(inputs) => {
                if inputs.iter().any(|&k| wants(k)) {
                    return Err(TensorError::Unsupported("opaque"));
                }
            }
            &Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (val(a), val(b));
                let gd = node.value.dims2();
                if wants(a) {
                    let (d, _, _) = if ta {
                        matmul_raw(bv.data(), bv.dims2(), tb, g, gd, true)
                    } else {
                        matmul_raw(g, gd, false, bv.data(), bv.dims2(), !tb)
                    };
                    send(a, d, grads);
                }
                if wants(b) {
                    let (d, _, _) = if tb {
                        matmul_raw(g, gd, true, av.data(), av.dims2(), ta)
                    } else {
                        matmul_raw(av.data(), av.dims2(), !ta, g, gd, false)
                    };
                    send(b, d, grads);
                }
            }
            &Op::Add(a, b) => {
                send(a, g.to_vec(), grads);
                send(b, g.to_vec(), grads);
            }
            &Op::Sub(a, b) => {
                send(a, g.to_vec(), grads);
                send(b, g.iter().map(|x| -x).collect(), grads);
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (val(a).data(), val(b).data());
                send(a, g.iter().zip(bv).map(|(g, y)| g * y).collect(), grads);
                send(b, g.iter().zip(av).map(|(g, x)| g * x).collect(), grads);
            }
            &Op::AddRow { a, row } => {
                let c = val(row).numel();
                let mut dr = vec![0.0; c];
                for gr in g.chunks_exact(c) {
                    dr.iter_mut().zip(gr).for_each(|(d, x)| *d += x);
                }
                send(a, g.to_vec(), grads);
                send(row, dr, grads);
            }
            &Op::Scale(a, k) => send(a, g.iter().map(|x| x * k).collect(), grads),
            &Op::AddScalar(a) => send(a, g.to_vec(), grads),
            &Op::DivScalar { a, s } => {
                let d = val(s).item();
                send(a, g.iter().map(|x| x / d).collect(), grads);
                if wants(s) {
                    // y = a / d  =>  dL/dd = -Σ g·y / d
                    let ds = -g.iter().zip(y).map(|(g, y)| g * y).sum::<f64>() / d;
                    send(s, vec![ds], grads);
                }
            }
            &Op::Square(a) => {
                let x = val(a).data();
                send(a, g.iter().zip(x).map(|(g, x)| 2.0 * g * x).collect(), grads);
            }
            &Op::Relu(a) => {
                let x = val(a).data();
                send(a, g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect(), grads);
            }
            &Op::Sigmoid(a) => {
                send(a, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(), grads);
            }
            &Op::Tanh(a) => {
                send(a, g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(), grads);
            }
            Op::L2NormRows { a, eps, norms } => {
                let c = node.value.cols();
                let mut d = vec![0.0; g.len()];
                for (r, &n) in norms.iter().enumerate() {
                    let (gr, yr, dr) = (&g[r * c..(r + 1) * c], &y[r * c..(r + 1) * c], &mut d[r * c..(r + 1) * c]);
                    if n > *eps {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for k in 0..c {
                            dr[k] = (gr[k] - yr[k] * dot) / n;
                        }
                    } else {
                        for k in 0..c {
                            dr[k] = gr[k] / eps;
                        }
                    }
                }
                send(*a, d, grads);
            }
            &Op::Softmax(a, axis) => {
                let (r, c) = node.value.dims2();
                let mut d = vec![0.0; g.len()];
                let lanes: Vec<Vec<usize>> = match axis {
                    Axis::Cols => (0..r).map(|i| (i * c..(i + 1) * c).collect()).collect(),
                    Axis::Rows => (0..c).map(|j| (0..r).map(|i| i * c + j).collect()).collect(),
                };
                for lane in lanes {
                    let dot: f64 = lane.iter().map(|&k| g[k] * y[k]).sum();
                    for &k in &lane {
                        d[k] = y[k] * (g[k] - dot);
                    }
                }
                send(a, d, grads);
            }
            &Op::Sum(a) => send(a, vec![g[0]; val(a).numel()], grads),
            &Op::Mean(a) => {
                let n = val(a).numel();
                send(a, vec![g[0] / n as f64; n], grads);
            }
            &Op::MeanRows(a) => {
                let (r, _) = val(a).dims2();
                let mut d = Vec::with_capacity(r * g.len());
                for _ in 0..r {
                    d.extend(g.iter().map(|x| x / r as f64));
                }
                send(a, d, grads);
            }
            &Op::Max { a, at } => {
                let mut d = vec![0.0; val(a).numel()];
                d[at] = g[0];
                send(a, d, grads);
            }
            Op::Gather { a, idx } => {
                let mut d = vec![0.0; val(*a).numel()];
                for (gi, &k) in g.iter().zip(idx) {
                    d[k] += gi;
                }
                send(*a, d, grads);
            }
            Op::GatherRows { a, idx } => {
                let av = val(*a);
                let c = av.cols();
                let mut d = vec![0.0; av.numel()];
                for (gr, &k) in g.chunks_exact(c).zip(idx) {
                    d[k * c..(k + 1) * c].iter_mut().zip(gr).for_each(|(d, x)| *d += x);
                }
                send(*a, d, grads);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).numel();
                    send(p, g[off..off + n].to_vec(), grads);
                    off += n;
                }
            }
            &Op::SliceRows { a, start } => {
                let av = val(a);
                let c = av.cols();
                let mut d = vec![0.0; av.numel()];
                d[start * c..start * c + g.len()].copy_from_slice(g);
                send(a, d, grads);
            }
            &Op::Transpose(a) => {
                let (r, c) = node.value.dims2();
                let gt = Tensor::matrix(r, c, g.to_vec()).transpose();
                send(a, gt.into_data(), grads);
            }
            &Op::Reshape(a) => send(a, g.to_vec(), grads),
            Op::BatchNorm { x, gamma, beta, xhat, inv, training } => {
                let (n, c) = dims2(val(*x).shape());
                let gamma_v = val(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for (gr, xr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for ch in 0..c {
                        dgamma[ch] += gr[ch] * xr[ch];
                        dbeta[ch] += gr[ch];
                    }
                }
                if wants(*x) {
                    let mut dx = vec![0.0; g.len()];
                    for ch in 0..c {
                        let clamped = inv[ch] < 0.0;
                        let s = inv[ch].abs();
                        for r in 0..n {
                            let k = r * c + ch;
                            dx[k] = if *training {
                                let mean_g = dbeta[ch] / n as f64;
                                let mean_gx = if clamped { 0.0 } else { dgamma[ch] / n as f64 };
                                gamma_v[ch] * s * (g[k] - mean_g - xhat[k] * mean_gx)
                            } else {
                                gamma_v[ch] * s * g[k]
                            };
                        }
                    }
                    send(*x, dx, grads);
                }
                send(*gamma, dgamma, grads);
                send(*beta, dbeta, grads);
            }
        }
        Ok(())
    }
}

fn softmax_in_place<'a>(lane: impl Iterator<Item = &'a mut f64>) {
    let mut lane: Vec<&mut f64> = lane.collect();
    let max = lane.iter().fold(f64::NEG_INFINITY, |m, x| m.max(**x));
    let mut total = 0.0;
    for x in lane.iter_mut() {
        **x = (**x - max).exp();
        total += **x;
    }
    for x in lane.iter_mut() {
        **x /= total;
    }
}

/// Evaluates `f` on a fresh tape and returns the resulting value.
pub fn eval<F>(f: F) -> Result<Tensor>
where
    F: FnOnce(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape)?;
    Ok(tape.value(out).clone())
}
