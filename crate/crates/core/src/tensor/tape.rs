use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use super::kernels::{self, Lanes};
use super::{Real, Tensor};
use crate::error::{Error, Result};
use crate::graph::CsrMatrix;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<'a, R> {
    Leaf,
    MatMul(Var, Var),
    SpMM(&'a CsrMatrix<R>, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, R),
    Relu(Var),
    Softmax(Var, usize),
    LogSumExp(Var, usize),
    L2Normalize(Var),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    CrossEntropy(Var, Vec<usize>),
    Reshape(Var),
    Transpose(Var),
    Sum(Var),
    BatchedMatVec(Var, Var),
    NeighborAttention {
        q: Var,
        k: Var,
        v: Var,
        adj: &'a CsrMatrix<R>,
        scale: R,
        weights: Vec<R>,
    },
}

impl<R> Op<'_, R> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::SpMM(..) => "sparse_dense_matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scalar_mul",
            Op::Relu(..) => "relu",
            Op::Softmax(..) => "softmax",
            Op::LogSumExp(..) => "log_sum_exp",
            Op::L2Normalize(..) => "l2_normalize",
            Op::GatherRows(..) => "gather_rows",
            Op::ConcatRows(..) => "concat_rows",
            Op::CrossEntropy(..) => "cross_entropy",
            Op::Reshape(..) => "reshape",
            Op::Transpose(..) => "transpose",
            Op::Sum(..) => "sum",
            Op::BatchedMatVec(..) => "batched_matvec",
            Op::NeighborAttention { .. } => "neighbor_attention",
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::AddRow(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::BatchedMatVec(a, b) => vec![*a, *b],
            Op::SpMM(_, a)
            | Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Softmax(a, _)
            | Op::LogSumExp(a, _)
            | Op::L2Normalize(a)
            | Op::GatherRows(a, _)
            | Op::CrossEntropy(a, _)
            | Op::Reshape(a)
            | Op::Transpose(a)
            | Op::Sum(a) => vec![*a],
            Op::ConcatRows(vs) => vs.clone(),
            Op::NeighborAttention { q, k, v, .. } => vec![*q, *k, *v],
        }
    }
}

struct Node<'a, R> {
    value: Tensor<R>,
    op: Op<'a, R>,
    requires_grad: bool,
}

/// Records primitive applications in topological order for reverse-mode
/// differentiation. Sparse operands are borrowed for the tape's lifetime.
pub struct Tape<'a, R: Real> {
    nodes: Vec<Node<'a, R>>,
    #[cfg(any(test, feature = "fault-injection"))]
    softmax_grad_fault: bool,
}

impl<R: Real> Default for Tape<'_, R> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<R> {
    grads: Vec<Option<Tensor<R>>>,
    shapes: Vec<Vec<usize>>,
}

impl<R: Real> Gradients<R> {
    /// Gradient of `v`; zeros when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Tensor<R> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn is_reached(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

fn mismatch(op: &'static str, a: &Tensor<impl Real>, b: &Tensor<impl Real>) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn require_matrix<T: Real>(op: &'static str, a: &Tensor<T>) -> Result<()> {
    if a.rank() == 2 {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: vec![0, 0],
        })
    }
}

fn zip_map<R: Real>(a: &Tensor<R>, b: &Tensor<R>, f: impl Fn(R, R) -> R) -> Tensor<R> {
    Tensor::new(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .expect("elementwise shape")
}

impl<'a, R: Real> Tape<'a, R> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            #[cfg(any(test, feature = "fault-injection"))]
            softmax_grad_fault: false,
        }
    }

    /// Corrupts the softmax backward rule on this tape (drops the
    /// normalization term) so that gradient checks can be seen to fail.
    #[cfg(any(test, feature = "fault-injection"))]
    pub fn inject_softmax_grad_fault(&mut self) {
        self.softmax_grad_fault = true;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<R>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor<R>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<R>, op: Op<'a, R>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor<R>, op: Op<'a, R>) -> Var {
        let rg = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        require_matrix("matmul", ta)?;
        require_matrix("matmul", tb)?;
        if ta.cols() != tb.rows() {
            return Err(mismatch("matmul", ta, tb));
        }
        let out = kernels::matmul(ta, tb);
        Ok(self.record(out, Op::MatMul(a, b)))
    }

    /// `adj · x` with a constant sparse left operand.
    pub fn sparse_dense_matmul(&mut self, adj: &'a CsrMatrix<R>, x: Var) -> Result<Var> {
        let tx = self.value(x);
        require_matrix("sparse_dense_matmul", tx)?;
        if adj.n_cols() != tx.rows() {
            return Err(Error::ShapeMismatch {
                op: "sparse_dense_matmul",
                lhs: vec![adj.n_rows(), adj.n_cols()],
                rhs: tx.shape().to_vec(),
            });
        }
        let out = adj.matmul_dense(tx);
        Ok(self.record(out, Op::SpMM(adj, x)))
    }

    /// Elementwise sum of equal shapes, or `[m × n] + [1 × n]` row broadcast.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let out = zip_map(ta, tb, |x, y| x + y);
            return Ok(self.record(out, Op::Add(a, b)));
        }
        if ta.rank() == 2 && tb.rank() == 2 && tb.rows() == 1 && tb.cols() == ta.cols() {
            let c = ta.cols();
            let bias = tb.data();
            let data = ta
                .data()
                .iter()
                .enumerate()
                .map(|(k, &x)| x + bias[k % c])
                .collect();
            let out = Tensor::new(ta.shape(), data)?;
            return Ok(self.record(out, Op::AddRow(a, b)));
        }
        Err(mismatch("add", ta, tb))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("sub", ta, tb));
        }
        let out = zip_map(ta, tb, |x, y| x - y);
        Ok(self.record(out, Op::Sub(a, b)))
    }

    /// Elementwise product of equal shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("mul", ta, tb));
        }
        let out = zip_map(ta, tb, |x, y| x * y);
        Ok(self.record(out, Op::Mul(a, b)))
    }

    pub fn scalar_mul(&mut self, a: Var, c: R) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.record(out, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > R::zero() { x } else { R::zero() });
        self.record(out, Op::Relu(a))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.value(a);
        check_axis("softmax", ta, axis)?;
        let out = kernels::softmax(ta, axis);
        Ok(self.record(out, Op::Softmax(a, axis)))
    }

    /// Keep-dims `log Σ exp` along `axis`.
    pub fn log_sum_exp(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.value(a);
        check_axis("log_sum_exp", ta, axis)?;
        let out = kernels::log_sum_exp(ta, axis);
        Ok(self.record(out, Op::LogSumExp(a, axis)))
    }

    /// Rows scaled to unit L2 norm; zero rows map to zero rows.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        require_matrix("l2_normalize", ta)?;
        let out = kernels::l2_normalize_rows(ta);
        Ok(self.record(out, Op::L2Normalize(a)))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        require_matrix("gather_rows", ta)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= ta.rows()) {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                lhs: ta.shape().to_vec(),
                rhs: vec![bad],
            });
        }
        let out = ta.select_rows(idx);
        Ok(self.record(out, Op::GatherRows(a, idx.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::ShapeMismatch {
            op: "concat_rows",
            lhs: Vec::new(),
            rhs: Vec::new(),
        })?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            require_matrix("concat_rows", t)?;
            if t.cols() != cols {
                return Err(mismatch("concat_rows", self.value(*first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(&[rows, cols], data)?;
        Ok(self.record(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Mean over rows of `-log softmax(logits)[target]`; a scalar.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        require_matrix("cross_entropy", t)?;
        if targets.len() != t.rows() || targets.iter().any(|&c| c >= t.cols()) {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                lhs: t.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let m = t.rows();
        let mut total = 0.0;
        for (i, &c) in targets.iter().enumerate() {
            let row = t.row(i);
            let lse = kernels::lse_f64(row.iter().map(|v| v.as_f64()));
            total += lse - row[c].as_f64();
        }
        let value = if m == 0 { 0.0 } else { total / m as f64 };
        let out = Tensor::scalar(R::from_f64(value));
        Ok(self.record(out, Op::CrossEntropy(logits, targets.to_vec())))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        Ok(self.record(out, Op::Reshape(a)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        require_matrix("transpose", ta)?;
        let out = ta.transposed();
        Ok(self.record(out, Op::Transpose(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().map(|v| v.as_f64()).sum();
        self.record(Tensor::scalar(R::from_f64(s)), Op::Sum(a))
    }

    /// Per-row matrix-vector product: row `i` of `w` (length `p·q`) is read as a
    /// row-major `[p × q]` matrix and applied to row `i` of `x` (`[n × q]`).
    pub fn batched_matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (tw, tx) = (self.value(w), self.value(x));
        require_matrix("batched_matvec", tw)?;
        require_matrix("batched_matvec", tx)?;
        let q = tx.cols();
        if tw.rows() != tx.rows() || q == 0 || tw.cols() % q != 0 {
            return Err(mismatch("batched_matvec", tw, tx));
        }
        let out = kernels::batched_matvec(tw, tx, tw.cols() / q);
        Ok(self.record(out, Op::BatchedMatVec(w, x)))
    }

    /// `out_i = Σ_{j ∈ N(i)} softmax_j(scale·⟨q_i, k_j⟩) · v_j` over the sparsity
    /// pattern of `adj` (values ignored). Rows with no neighbors are zero.
    pub fn neighbor_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        adj: &'a CsrMatrix<R>,
        scale: R,
    ) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        require_matrix("neighbor_attention", tq)?;
        require_matrix("neighbor_attention", tk)?;
        require_matrix("neighbor_attention", tv)?;
        if tq.shape() != tk.shape() {
            return Err(mismatch("neighbor_attention", tq, tk));
        }
        if tv.rows() != tq.rows() || adj.n_rows() != tq.rows() || adj.n_cols() != tk.rows() {
            return Err(mismatch("neighbor_attention", tq, tv));
        }
        let n = tq.rows();
        let dv = tv.cols();
        let s = scale.as_f64();
        let mut weights = Vec::with_capacity(adj.nnz());
        let mut out = vec![R::zero(); n * dv];
        let mut acc = vec![0.0f64; dv];
        for i in 0..n {
            let (cols, _) = adj.row(i);
            if cols.is_empty() {
                continue;
            }
            let qi = tq.row(i);
            let scores: Vec<f64> = cols
                .iter()
                .map(|&j| {
                    s * qi
                        .iter()
                        .zip(tk.row(j))
                        .map(|(a, b)| a.as_f64() * b.as_f64())
                        .sum::<f64>()
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|&x| libm::exp(x - max)).collect();
            let total: f64 = exps.iter().sum();
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (&j, e) in cols.iter().zip(&exps) {
                let a = e / total;
                weights.push(R::from_f64(a));
                for (slot, vv) in acc.iter_mut().zip(tv.row(j)) {
                    *slot += a * vv.as_f64();
                }
            }
            for (o, a) in out[i * dv..(i + 1) * dv].iter_mut().zip(&acc) {
                *o = R::from_f64(*a);
            }
        }
        let out = Tensor::new(&[n, dv], out)?;
        Ok(self.record(
            out,
            Op::NeighborAttention {
                q,
                k,
                v,
                adj,
                scale,
                weights,
            },
        ))
    }

    /// Pulls a unit gradient back from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<R>> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<R>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape(), R::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.pull_back(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn pull_back(&self, node: &Node<'a, R>, g: &Tensor<R>, grads: &mut [Option<Tensor<R>>]) {
        let mut send = |v: Var, contrib: Tensor<R>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc
                    .data_mut()
                    .iter_mut()
                    .zip(contrib.data())
                    .for_each(|(a, &c)| *a = *a + c),
                slot @ None => *slot = Some(contrib),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    send(*a, kernels::matmul_nt(g, tb));
                }
                if self.requires_grad(*b) {
                    send(*b, kernels::matmul_tn(ta, g));
                }
            }
            Op::SpMM(adj, x) => send(*x, adj.transpose_matmul_dense(g)),
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::AddRow(a, b) => {
                send(*a, g.clone());
                let c = g.cols();
                let mut col = vec![0.0f64; c];
                for (k, v) in g.data().iter().enumerate() {
                    col[k % c] += v.as_f64();
                }
                send(*b, Tensor::from_f64(&[1, c], &col).expect("bias grad"));
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                send(*a, zip_map(g, tb, |x, y| x * y));
                send(*b, zip_map(g, ta, |x, y| x * y));
            }
            Op::Scale(a, c) => send(*a, g.map(|x| x * *c)),
            Op::Relu(a) => {
                let ta = self.value(*a);
                send(*a, zip_map(g, ta, |gv, xv| if xv > R::zero() { gv } else { R::zero() }));
            }
            Op::Softmax(a, axis) => {
                let lanes = Lanes::new(y.shape(), *axis);
                let (yd, gd) = (y.data(), g.data());
                let mut dx = vec![R::zero(); yd.len()];
                for l in 0..lanes.count {
                    let dot: f64 = (0..lanes.len)
                        .map(|p| {
                            let k = lanes.index(l, p);
                            yd[k].as_f64() * gd[k].as_f64()
                        })
                        .sum();
                    #[cfg(any(test, feature = "fault-injection"))]
                    let dot = if self.softmax_grad_fault { 0.0 } else { dot };
                    for p in 0..lanes.len {
                        let k = lanes.index(l, p);
                        dx[k] = R::from_f64(yd[k].as_f64() * (gd[k].as_f64() - dot));
                    }
                }
                send(*a, Tensor::new(y.shape(), dx).expect("softmax grad"));
            }
            Op::LogSumExp(a, axis) => {
                let ta = self.value(*a);
                let sm = kernels::softmax(ta, *axis);
                let lanes = Lanes::new(ta.shape(), *axis);
                let mut dx = sm.into_data();
                for l in 0..lanes.count {
                    let gl = g.data()[l];
                    for p in 0..lanes.len {
                        let k = lanes.index(l, p);
                        dx[k] = dx[k] * gl;
                    }
                }
                send(*a, Tensor::new(ta.shape(), dx).expect("lse grad"));
            }
            Op::L2Normalize(a) => {
                let ta = self.value(*a);
                let norms = kernels::row_norms(ta);
                let c = ta.cols();
                let mut dx = vec![R::zero(); ta.len()];
                for (i, &nrm) in norms.iter().enumerate() {
                    if nrm == 0.0 {
                        continue;
                    }
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(u, v)| u.as_f64() * v.as_f64()).sum();
                    for p in 0..c {
                        dx[i * c + p] =
                            R::from_f64((gr[p].as_f64() - yr[p].as_f64() * dot) / nrm);
                    }
                }
                send(*a, Tensor::new(ta.shape(), dx).expect("l2 grad"));
            }
            Op::GatherRows(a, idx) => {
                let ta = self.value(*a);
                let c = ta.cols();
                let mut dx = vec![R::zero(); ta.len()];
                for (r, &i) in idx.iter().enumerate() {
                    for p in 0..c {
                        dx[i * c + p] = dx[i * c + p] + g.data()[r * c + p];
                    }
                }
                send(*a, Tensor::new(ta.shape(), dx).expect("gather grad"));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    let piece = Tensor::new(
                        self.value(p).shape(),
                        g.data()[offset..offset + len].to_vec(),
                    )
                    .expect("concat grad");
                    offset += len;
                    send(p, piece);
                }
            }
            Op::CrossEntropy(a, targets) => {
                let ta = self.value(*a);
                let m = ta.rows().max(1) as f64;
                let scale = g.item().as_f64() / m;
                let sm = kernels::softmax(ta, 1);
                let c = ta.cols();
                let mut dx: Vec<R> = sm
                    .data()
                    .iter()
                    .map(|p| R::from_f64(p.as_f64() * scale))
                    .collect();
                for (i, &t) in targets.iter().enumerate() {
                    dx[i * c + t] = dx[i * c + t] - R::from_f64(scale);
                }
                send(*a, Tensor::new(ta.shape(), dx).expect("ce grad"));
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                send(*a, g.clone().reshaped(&shape).expect("reshape grad"));
            }
            Op::Transpose(a) => send(*a, g.transposed()),
            Op::Sum(a) => {
                let gv = g.item();
                send(*a, Tensor::full(self.value(*a).shape(), gv));
            }
            Op::BatchedMatVec(w, x) => {
                let (tw, tx) = (self.value(*w), self.value(*x));
                let (n, q) = (tx.rows(), tx.cols());
                let p = tw.cols() / q;
                if self.requires_grad(*w) {
                    let mut dw = Vec::with_capacity(tw.len());
                    for i in 0..n {
                        let (gr, xr) = (g.row(i), tx.row(i));
                        for a in 0..p {
                            let ga = gr[a].as_f64();
                            dw.extend(xr.iter().map(|xv| R::from_f64(ga * xv.as_f64())));
                        }
                    }
                    send(*w, Tensor::new(tw.shape(), dw).expect("bmv grad w"));
                }
                if self.requires_grad(*x) {
                    let mut dx = Vec::with_capacity(tx.len());
                    for i in 0..n {
                        let (gr, wr) = (g.row(i), tw.row(i));
                        for b in 0..q {
                            let s: f64 = (0..p).map(|a| gr[a].as_f64() * wr[a * q + b].as_f64()).sum();
                            dx.push(R::from_f64(s));
                        }
                    }
                    send(*x, Tensor::new(tx.shape(), dx).expect("bmv grad x"));
                }
            }
            Op::NeighborAttention {
                q,
                k,
                v,
                adj,
                scale,
                weights,
            } => {
                let (tq, tk, tv) = (self.value(*q), self.value(*k), self.value(*v));
                let (n, h, dv) = (tq.rows(), tq.cols(), tv.cols());
                let s = scale.as_f64();
                let mut dq = vec![0.0f64; n * h];
                let mut dk = vec![0.0f64; tk.rows() * h];
                let mut dvv = vec![0.0f64; tv.rows() * dv];
                let mut w_at = 0;
                for i in 0..n {
                    let (cols, _) = adj.row(i);
                    if cols.is_empty() {
                        continue;
                    }
                    let gi = g.row(i);
                    let att: Vec<f64> = weights[w_at..w_at + cols.len()]
                        .iter()
                        .map(|a| a.as_f64())
                        .collect();
                    w_at += cols.len();
                    // dL/da_ij = ⟨g_i, v_j⟩
                    let da: Vec<f64> = cols
                        .iter()
                        .map(|&j| gi.iter().zip(tv.row(j)).map(|(a, b)| a.as_f64() * b.as_f64()).sum())
                        .collect();
                    let mean: f64 = att.iter().zip(&da).map(|(a, d)| a * d).sum();
                    for (t, &j) in cols.iter().enumerate() {
                        for (slot, gv) in dvv[j * dv..(j + 1) * dv].iter_mut().zip(gi) {
                            *slot += att[t] * gv.as_f64();
                        }
                        let ds = att[t] * (da[t] - mean) * s;
                        if ds == 0.0 {
                            continue;
                        }
                        let (qi, kj) = (tq.row(i), tk.row(j));
                        for c in 0..h {
                            dq[i * h + c] += ds * kj[c].as_f64();
                            dk[j * h + c] += ds * qi[c].as_f64();
                        }
                    }
                }
                send(*q, Tensor::from_f64(tq.shape(), &dq).expect("attn dq"));
                send(*k, Tensor::from_f64(tk.shape(), &dk).expect("attn dk"));
                send(*v, Tensor::from_f64(tv.shape(), &dvv).expect("attn dv"));
            }
        }
    }

    /// Text listing of the recorded nodes, one per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let parents: Vec<String> = node.op.parents().iter().map(|p| format!("#{}", p.0)).collect();
            let _ = writeln!(
                out,
                "#{i} {}({}) {:?}{}",
                node.op.name(),
                parents.join(", "),
                node.value.shape(),
                if node.requires_grad { " grad" } else { "" }
            );
        }
        out
    }
}

fn check_axis<R: Real>(op: &'static str, t: &Tensor<R>, axis: usize) -> Result<()> {
    let ok = match t.rank() {
        2 => axis < 2,
        _ => axis == 0,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![axis],
        })
    }
}
