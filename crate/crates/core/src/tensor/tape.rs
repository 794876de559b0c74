//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive applied to its [`Var`] handles together
//! with the values needed by the local backward rule. A single call to
//! [`Tape::backward`] sweeps the record in reverse and yields gradients for
//! every node that depends on a leaf created with [`Tape::leaf`].
//!
//! The tape is rebuilt for every forward pass and is single-threaded.

use std::rc::Rc;

use super::dense::{matmul_nn, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Guard used by every division-like primitive.
pub const DIV_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulScalarVar(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Neg(Var),
    Abs(Var),
    Relu(Var),
    Tanh(Var),
    Sin(Var, f64),
    Silu(Var),
    Square(Var),
    Recip(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Reshape(Var),
    GatherRows(Var, Rc<Vec<usize>>),
    ScatterAddRows(Var, Rc<Vec<usize>>),
    RowOuter(Var, Var),
    RowNormalize(Var),
    LayerNormRows(Var, f64),
    GatherPatches(Var, Rc<Vec<Option<usize>>>, usize),
    SoftmaxXent(Var, Rc<Vec<usize>>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// influence the loss or carries no gradient.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::get`] but materializes zeros for absent entries.
    pub fn wrt(&self, v: Var, tape: &Tape) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let s = tape.value(v).shape().to_vec();
                let n = s.iter().product();
                Tensor::new(s, vec![0.0; n]).expect("shape product matches")
            }
        }
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        Ok(())
    }

    // ----- linear algebra -------------------------------------------------

    /// `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`; with `b` stored as `[out, in]` this is a batched linear map.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(mismatch("matmul_nt", ta, tb));
        }
        let (n, k, m) = (ta.rows(), ta.cols(), tb.rows());
        let value = Tensor::matrix(n, m, matmul_nt(ta.data(), tb.data(), n, k, m))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMulNt(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    // ----- elementwise binary ---------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Elementwise `a / b`; fails when any `|b| < DIV_EPS`.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        if let Some(index) = self.value(b).data().iter().position(|v| v.abs() < DIV_EPS) {
            return Err(Error::DivisionByZero { op: "div", index });
        }
        let value = self.value(a).zip_map(self.value(b), |x, y| x / y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Div(a, b), rg))
    }

    /// `a[n×m] + row[1×m]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(mismatch("add_row", ta, tr));
        }
        let m = ta.cols();
        let mut value = ta.clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += tr.data()[i % m];
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    /// `a * s` for a `[1, 1]` node `s`.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        let ts = self.value(s);
        if ts.numel() != 1 {
            return Err(mismatch("mul_scalar_var", self.value(a), ts));
        }
        let sv = ts.item();
        let value = self.value(a).map(|x| x * sv);
        let rg = self.rg(&[a, s]);
        Ok(self.push(value, Op::MulScalarVar(a, s), rg))
    }

    // ----- elementwise unary ----------------------------------------------

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddConst(a), |x| x + c)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    /// `sin(omega · a)`.
    pub fn sin(&mut self, a: Var, omega: f64) -> Var {
        self.unary(a, Op::Sin(a, omega), |x| (omega * x).sin())
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Silu(a), |x| x * sigmoid(x))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Elementwise `1 / a`; fails when any `|a| < DIV_EPS`.
    pub fn recip(&mut self, a: Var) -> Result<Var> {
        if let Some(index) = self.value(a).data().iter().position(|v| v.abs() < DIV_EPS) {
            return Err(Error::DivisionByZero { op: "recip", index });
        }
        Ok(self.unary(a, Op::Recip(a), |x| 1.0 / x))
    }

    // ----- reductions -----------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.numel().max(1) as f64);
        let rg = self.rg(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    // ----- structural -----------------------------------------------------

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(mismatch("concat_cols", self.value(parts[0]), self.value(p)));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let value = Tensor::matrix(rows, total, data)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if start + len > t.cols() {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                left: t.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let rows = t.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.row_slice(r)[start..start + len]);
        }
        let value = Tensor::matrix(rows, len, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SliceCols(a, start), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if start + len > t.rows() {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                left: t.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let c = t.cols();
        let value = Tensor::matrix(len, c, t.data()[start * c..(start + len) * c].to_vec())?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SliceRows(a, start), rg))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.value(a).reshape(vec![rows, cols])?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Rows of `a` selected (with repetition) by `idx`.
    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            if i >= t.rows() {
                return Err(Error::InvalidTensor(format!(
                    "gather index {i} out of range for {} rows",
                    t.rows()
                )));
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let value = Tensor::matrix(idx.len(), c, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::GatherRows(a, idx), rg))
    }

    /// Sums row `r` of `a` into output row `idx[r]` of an `[n, cols]` result.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Rc<Vec<usize>>, n: usize) -> Result<Var> {
        let t = self.value(a);
        if idx.len() != t.rows() {
            return Err(Error::InvalidTensor(format!(
                "scatter index has {} entries for {} rows",
                idx.len(),
                t.rows()
            )));
        }
        let c = t.cols();
        let mut value = Tensor::zeros(n, c);
        for (r, &i) in idx.iter().enumerate() {
            if i >= n {
                return Err(Error::InvalidTensor(format!(
                    "scatter target {i} out of range for {n} rows"
                )));
            }
            let src = t.row_slice(r);
            let dst = &mut value.data_mut()[i * c..(i + 1) * c];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::ScatterAddRows(a, idx), rg))
    }

    /// Per-row outer product flattened row-major: `out[r, i*q + j] = a[r,i]·b[r,j]`.
    pub fn row_outer(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(mismatch("row_outer", ta, tb));
        }
        let (n, p, q) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(n * p * q);
        for r in 0..n {
            let (ar, br) = (ta.row_slice(r), tb.row_slice(r));
            for &x in ar {
                data.extend(br.iter().map(|y| x * y));
            }
        }
        let value = Tensor::matrix(n, p * q, data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::RowOuter(a, b), rg))
    }

    /// Each row divided by its Euclidean norm. Rows with norm below
    /// [`DIV_EPS`] map to zero (and pass zero gradient).
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let mut value = t.clone();
        for r in 0..t.rows() {
            let row = &mut value.data_mut()[r * c..(r + 1) * c];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < DIV_EPS {
                debug_assert!(
                    row.iter().all(|v| v.is_finite()),
                    "non-finite row in row_normalize"
                );
                row.iter_mut().for_each(|v| *v = 0.0);
            } else {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        let rg = self.rg(&[a]);
        self.push(value, Op::RowNormalize(a), rg)
    }

    /// Zero-mean, unit-variance normalization of each row (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let mut value = t.clone();
        for r in 0..t.rows() {
            let row = &mut value.data_mut()[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        }
        let rg = self.rg(&[a]);
        self.push(value, Op::LayerNormRows(a, eps), rg)
    }

    /// im2col-style gather: `out[o, c*taps + t] = a[table[o*taps + t], c]`,
    /// zero where the table entry is `None`.
    pub fn gather_patches(
        &mut self,
        a: Var,
        table: Rc<Vec<Option<usize>>>,
        taps: usize,
    ) -> Result<Var> {
        let t = self.value(a);
        if taps == 0 || !table.len().is_multiple_of(taps) {
            return Err(Error::InvalidTensor("patch table not divisible by taps".into()));
        }
        let (rows_in, c) = (t.rows(), t.cols());
        let n_out = table.len() / taps;
        let mut value = Tensor::zeros(n_out, c * taps);
        let out = value.data_mut();
        for o in 0..n_out {
            for tap in 0..taps {
                if let Some(src) = table[o * taps + tap] {
                    if src >= rows_in {
                        return Err(Error::InvalidTensor(format!(
                            "patch source {src} out of range"
                        )));
                    }
                    for ch in 0..c {
                        out[o * c * taps + ch * taps + tap] = t.data()[src * c + ch];
                    }
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::GatherPatches(a, table, taps), rg))
    }

    /// Mean cross-entropy of row-wise softmax against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: Rc<Vec<usize>>) -> Result<Var> {
        let t = self.value(logits);
        let (n, c) = (t.rows(), t.cols());
        if labels.len() != n {
            return Err(Error::InvalidTensor(format!(
                "{} labels for {n} rows",
                labels.len()
            )));
        }
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(Error::InvalidTensor(format!("label {y} >= classes {c}")));
            }
            let row = t.row_slice(r);
            total += log_sum_exp(row) - row[y];
        }
        let value = Tensor::scalar(total / n.max(1) as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(value, Op::SoftmaxXent(logits, labels), rg))
    }

    // ----- backward -------------------------------------------------------

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(lt.shape().to_vec(), vec![1.0])?);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, mut contribution: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let shape = self.nodes[v.0].value.shape();
        if contribution.shape() != shape {
            // matrix-view results for higher-rank operands
            contribution = contribution
                .reshape(shape.to_vec())
                .expect("gradient element count matches its node");
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                if rg(*a) {
                    let da = Tensor::matrix(n, k, matmul_nt(g.data(), tb.data(), n, m, k))?;
                    self.acc(grads, *a, da);
                }
                if rg(*b) {
                    let db = Tensor::matrix(k, m, matmul_tn(ta.data(), g.data(), n, k, m))?;
                    self.acc(grads, *b, db);
                }
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, k, m) = (ta.rows(), ta.cols(), tb.rows());
                if rg(*a) {
                    let da = Tensor::matrix(n, k, matmul_nn(g.data(), tb.data(), n, m, k))?;
                    self.acc(grads, *a, da);
                }
                if rg(*b) {
                    let db = Tensor::matrix(m, k, matmul_tn(g.data(), ta.data(), n, m, k))?;
                    self.acc(grads, *b, db);
                }
            }
            Op::Transpose(a) => self.acc(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    self.acc(grads, *a, g.zip_map(val(*b), |x, y| x * y));
                }
                if rg(*b) {
                    self.acc(grads, *b, g.zip_map(val(*a), |x, y| x * y));
                }
            }
            Op::Div(a, b) => {
                let tb = val(*b);
                if rg(*a) {
                    self.acc(grads, *a, g.zip_map(tb, |x, y| x / y));
                }
                if rg(*b) {
                    let mut db = g.zip_map(&node.value, |x, q| -x * q);
                    for (d, y) in db.data_mut().iter_mut().zip(tb.data()) {
                        *d /= y;
                    }
                    self.acc(grads, *b, db);
                }
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, g.clone());
                if rg(*row) {
                    let m = g.cols();
                    let mut db = vec![0.0; m];
                    for (i, v) in g.data().iter().enumerate() {
                        db[i % m] += v;
                    }
                    self.acc(grads, *row, Tensor::row(db));
                }
            }
            Op::MulScalarVar(a, s) => {
                let sv = val(*s).item();
                if rg(*a) {
                    self.acc(grads, *a, g.map(|x| x * sv));
                }
                if rg(*s) {
                    let ds: f64 = g.data().iter().zip(val(*a).data()).map(|(x, y)| x * y).sum();
                    let shape = val(*s).shape().to_vec();
                    self.acc(grads, *s, Tensor::new(shape, vec![ds])?);
                }
            }
            Op::Scale(a, c) => self.acc(grads, *a, g.map(|x| x * c)),
            Op::AddConst(a) => self.acc(grads, *a, g.clone()),
            Op::Neg(a) => self.acc(grads, *a, g.map(|x| -x)),
            Op::Abs(a) => {
                let d = g.zip_map(val(*a), |x, y| {
                    if y > 0.0 {
                        x
                    } else if y < 0.0 {
                        -x
                    } else {
                        0.0
                    }
                });
                self.acc(grads, *a, d);
            }
            Op::Relu(a) => {
                let d = g.zip_map(val(*a), |x, y| if y > 0.0 { x } else { 0.0 });
                self.acc(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = g.zip_map(&node.value, |x, y| x * (1.0 - y * y));
                self.acc(grads, *a, d);
            }
            Op::Sin(a, omega) => {
                let w = *omega;
                let d = g.zip_map(val(*a), |x, y| x * w * (w * y).cos());
                self.acc(grads, *a, d);
            }
            Op::Silu(a) => {
                let d = g.zip_map(val(*a), |x, y| {
                    let s = sigmoid(y);
                    x * s * (1.0 + y * (1.0 - s))
                });
                self.acc(grads, *a, d);
            }
            Op::Square(a) => {
                let d = g.zip_map(val(*a), |x, y| 2.0 * x * y);
                self.acc(grads, *a, d);
            }
            Op::Recip(a) => {
                let d = g.zip_map(&node.value, |x, y| -x * y * y);
                self.acc(grads, *a, d);
            }
            Op::Sum(a) => {
                let gv = g.item();
                self.acc(grads, *a, val(*a).map(|_| gv));
            }
            Op::Mean(a) => {
                let t = val(*a);
                let gv = g.item() / t.numel().max(1) as f64;
                self.acc(grads, *a, t.map(|_| gv));
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut start = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if rg(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + start..r * total + start + w]);
                        }
                        self.acc(grads, p, Tensor::matrix(rows, w, d)?);
                    }
                    start += w;
                }
            }
            Op::SliceCols(a, start) => {
                let t = val(*a);
                let (rows, c, w) = (t.rows(), t.cols(), g.cols());
                let mut d = Tensor::zeros(rows, c);
                for r in 0..rows {
                    d.data_mut()[r * c + start..r * c + start + w].copy_from_slice(g.row_slice(r));
                }
                self.acc(grads, *a, d);
            }
            Op::SliceRows(a, start) => {
                let t = val(*a);
                let c = t.cols();
                let mut d = Tensor::zeros(t.rows(), c);
                d.data_mut()[start * c..start * c + g.numel()].copy_from_slice(g.data());
                self.acc(grads, *a, d);
            }
            Op::Reshape(a) => {
                let shape = val(*a).shape().to_vec();
                self.acc(grads, *a, g.reshape(shape)?);
            }
            Op::GatherRows(a, idx) => {
                let t = val(*a);
                let c = t.cols();
                let mut d = Tensor::zeros(t.rows(), c);
                for (r, &i) in idx.iter().enumerate() {
                    let dst = &mut d.data_mut()[i * c..(i + 1) * c];
                    for (x, y) in dst.iter_mut().zip(g.row_slice(r)) {
                        *x += y;
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::ScatterAddRows(a, idx) => {
                let c = g.cols();
                let mut d = Vec::with_capacity(idx.len() * c);
                for &i in idx.iter() {
                    d.extend_from_slice(g.row_slice(i));
                }
                self.acc(grads, *a, Tensor::matrix(idx.len(), c, d)?);
            }
            Op::RowOuter(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, p, q) = (ta.rows(), ta.cols(), tb.cols());
                let mut da = Tensor::zeros(n, p);
                let mut db = Tensor::zeros(n, q);
                for r in 0..n {
                    let gr = g.row_slice(r);
                    let (ar, br) = (ta.row_slice(r), tb.row_slice(r));
                    for i in 0..p {
                        let mut s = 0.0;
                        for j in 0..q {
                            let gv = gr[i * q + j];
                            s += gv * br[j];
                            db.data_mut()[r * q + j] += gv * ar[i];
                        }
                        da.data_mut()[r * p + i] = s;
                    }
                }
                self.acc(grads, *a, da);
                self.acc(grads, *b, db);
            }
            Op::RowNormalize(a) => {
                let t = val(*a);
                let y = &node.value;
                let c = t.cols();
                let mut d = Tensor::zeros(t.rows(), c);
                for r in 0..t.rows() {
                    let xr = t.row_slice(r);
                    let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm < DIV_EPS {
                        continue;
                    }
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for k in 0..c {
                        d.data_mut()[r * c + k] = (gr[k] - yr[k] * dot) / norm;
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::LayerNormRows(a, eps) => {
                let t = val(*a);
                let y = &node.value;
                let c = t.cols();
                let mut d = Tensor::zeros(t.rows(), c);
                for r in 0..t.rows() {
                    let xr = t.row_slice(r);
                    let mean = xr.iter().sum::<f64>() / c as f64;
                    let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let gm = gr.iter().sum::<f64>() / c as f64;
                    let gym = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for k in 0..c {
                        d.data_mut()[r * c + k] = inv * (gr[k] - gm - yr[k] * gym);
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::GatherPatches(a, table, taps) => {
                let t = val(*a);
                let c = t.cols();
                let mut d = Tensor::zeros(t.rows(), c);
                let n_out = table.len() / taps;
                for o in 0..n_out {
                    for tap in 0..*taps {
                        if let Some(src) = table[o * taps + tap] {
                            for ch in 0..c {
                                d.data_mut()[src * c + ch] += g.data()[o * c * taps + ch * taps + tap];
                            }
                        }
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::SoftmaxXent(logits, labels) => {
                let t = val(*logits);
                let (n, c) = (t.rows(), t.cols());
                let scale = g.item() / n.max(1) as f64;
                let mut d = Tensor::zeros(n, c);
                for (r, &y) in labels.iter().enumerate() {
                    let row = t.row_slice(r);
                    let lse = log_sum_exp(row);
                    let out = &mut d.data_mut()[r * c..(r + 1) * c];
                    for (k, (o, &v)) in out.iter_mut().zip(row).enumerate() {
                        let target = if k == y { 1.0 } else { 0.0 };
                        *o = scale * ((v - lse).exp() - target);
                    }
                }
                self.acc(grads, *logits, d);
            }
        }
        Ok(())
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient_at_three() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.square(x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn linear_sum_gradient_is_broadcast_input() {
        // loss = sum(W x) with W [2x3], x [3x1] -> dW[i,j] = x[j]
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::from_fn(2, 3, |i, j| (i + j) as f64));
        let x = tape.constant(Tensor::column(vec![1.0, -2.0, 0.5]));
        let wx = tape.matmul(w, x).unwrap();
        let loss = tape.sum(wx);
        let g = tape.backward(loss).unwrap();
        let dw = g.get(w).unwrap();
        for i in 0..2 {
            assert_eq!(dw.row_slice(i), &[1.0, -2.0, 0.5]);
        }
        assert!(g.get(x).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn division_guard() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![1.0, 0.0]));
        assert!(matches!(
            tape.recip(x),
            Err(Error::DivisionByZero { index: 1, .. })
        ));
        let y = tape.leaf(Tensor::row(vec![1.0, 1e-13]));
        assert!(tape.div(x, y).is_err());
    }

    #[test]
    fn zero_row_normalizes_to_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 2, vec![3.0, 4.0, 0.0, 0.0]).unwrap());
        let y = tape.row_normalize(x);
        assert_eq!(tape.value(y).data(), &[0.6, 0.8, 0.0, 0.0]);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(&g.get(x).unwrap().data()[2..], &[0.0, 0.0]);
    }

    #[test]
    fn scatter_then_gather_shapes() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(3, 2, |i, j| (i * 2 + j) as f64));
        let idx = Rc::new(vec![1, 1, 0]);
        let s = tape.scatter_add_rows(x, idx, 2).unwrap();
        assert_eq!(tape.value(s).data(), &[4.0, 5.0, 2.0, 4.0]);
        assert!(tape.scatter_add_rows(x, Rc::new(vec![0, 5, 0]), 2).is_err());
    }
}
