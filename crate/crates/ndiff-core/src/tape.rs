//! Wengert-list reverse-mode differentiation.
//!
//! Each call on [`Tape`] evaluates eagerly and appends one node. Nodes that do
//! not depend on a differentiable leaf are marked constant and skipped during
//! the reverse sweep.

use std::collections::BTreeMap;

use crate::array::{gemm, DenseArray};
use crate::error::{Error, Result};
use crate::param::{ParamId, Parameter};

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
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Gelu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    LogSoftmax(Var),
    ClampMin(Var, f64),
    SumAll(Var),
    SumCols(Var),
    MeanRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ColAffine(Var, Vec<f64>),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: DenseArray,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`]: gradients for every parameter leaf and every
/// differentiable input leaf reachable from the loss.
#[derive(Debug, Default)]
pub struct Gradients {
    params: BTreeMap<ParamId, DenseArray>,
    leaves: BTreeMap<usize, DenseArray>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&DenseArray> {
        self.params.get(&id)
    }

    /// Gradient with respect to an input leaf created by [`Tape::input`].
    pub fn wrt(&self, var: Var) -> Option<&DenseArray> {
        self.leaves.get(&var.0)
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Adds the stored gradients into `Parameter::grad` of matching params.
    pub fn accumulate<'a>(&self, params: impl IntoIterator<Item = &'a mut Parameter>) {
        for p in params {
            if let Some(g) = self.params.get(&p.id()) {
                p.grad.axpy(1.0, g);
            }
        }
    }
}

fn shape_err(op: &'static str, a: &DenseArray, b: &DenseArray) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
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

    pub fn value(&self, v: Var) -> &DenseArray {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: DenseArray, op: Op, requires_grad: bool) -> Var {
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

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, value: DenseArray) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable input; its gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, value: DenseArray) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Trainable parameter leaf.
    pub fn param(&mut self, p: &Parameter) -> Var {
        self.push(p.value.clone(), Op::Param(p.id()), true)
    }

    /// Parameter used as a frozen constant (e.g. critic weights inside the
    /// policy loss).
    pub fn frozen(&mut self, p: &Parameter) -> Var {
        self.constant(p.value.clone())
    }

    /// Stop-gradient: same value, cut from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<DenseArray> {
        let (x, y) = (self.value(a), self.value(b));
        if x.dims2() != y.dims2() {
            return Err(shape_err(name, x, y));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let (r, c) = x.dims2();
        Ok(DenseArray::matrix(r, c, data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip(a, b, "add", |p, q| p + q)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip(a, b, "sub", |p, q| p - q)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip(a, b, "mul", |p, q| p * q)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// `a[i, j] + row[j]`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        let (n, m) = x.dims2();
        if r.len() != m {
            return Err(shape_err("add_row", x, r));
        }
        let rd = r.data();
        let mut data = x.data().to_vec();
        for chunk in data.chunks_mut(m.max(1)) {
            for (v, b) in chunk.iter_mut().zip(rd) {
                *v += b;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(DenseArray::matrix(n, m, data), Op::AddRow(a, row), rg))
    }

    /// `a[i, j] * row[j]`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        let (n, m) = x.dims2();
        if r.len() != m {
            return Err(shape_err("mul_row", x, r));
        }
        let rd = r.data();
        let mut data = x.data().to_vec();
        for chunk in data.chunks_mut(m.max(1)) {
            for (v, b) in chunk.iter_mut().zip(rd) {
                *v *= b;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(DenseArray::matrix(n, m, data), Op::MulRow(a, row), rg))
    }

    /// `a[i, j] * col[i]` with `col` of shape `[n, 1]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (x, c) = (self.value(a), self.value(col));
        let (n, m) = x.dims2();
        if c.len() != n {
            return Err(shape_err("mul_col", x, c));
        }
        let cd = c.data();
        let mut data = x.data().to_vec();
        for (i, chunk) in data.chunks_mut(m.max(1)).enumerate() {
            chunk.iter_mut().for_each(|v| *v *= cd[i]);
        }
        let rg = self.rg(&[a, col]);
        Ok(self.push(DenseArray::matrix(n, m, data), Op::MulCol(a, col), rg))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let x = self.value(a);
        let (r, c) = x.dims2();
        let value = DenseArray::matrix(r, c, x.data().iter().map(|&v| f(v)).collect());
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |v| c * v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |v| v + c)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |v| v.max(0.0))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Gelu(a), gelu)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |v| v * v)
    }

    /// `max(a, floor)`; no gradient below the floor.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        self.unary(a, Op::ClampMin(a, floor), |v| v.max(floor))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (n, m) = x.dims2();
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(m.max(1)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let rg = self.rg(&[a]);
        self.push(DenseArray::matrix(n, m, data), Op::LogSoftmax(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(&[a]);
        self.push(DenseArray::scalar(s), Op::SumAll(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sums each row: `[n, m] -> [n, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (n, m) = x.dims2();
        let data = x.data().chunks(m.max(1)).map(|r| r.iter().sum()).collect();
        let rg = self.rg(&[a]);
        self.push(DenseArray::matrix(n, 1, data), Op::SumCols(a), rg)
    }

    /// Averages over rows: `[n, m] -> [1, m]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (n, m) = x.dims2();
        let mut data = vec![0.0; m];
        for row in x.data().chunks(m.max(1)) {
            for (d, v) in data.iter_mut().zip(row) {
                *d += v;
            }
        }
        data.iter_mut().for_each(|d| *d /= n as f64);
        let rg = self.rg(&[a]);
        self.push(DenseArray::matrix(1, m, data), Op::MeanRows(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != n {
                return Err(shape_err("concat_cols", self.value(parts[0]), v));
            }
            total += v.cols();
        }
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            DenseArray::matrix(n, total, data),
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.cols() != m {
                return Err(shape_err("concat_rows", self.value(parts[0]), v));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let rg = self.rg(parts);
        Ok(self.push(
            DenseArray::matrix(rows, m, data),
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice_rows(start, end);
        let rg = self.rg(&[a]);
        self.push(value, Op::SliceRows(a, start), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        let (n, _) = x.dims2();
        let mut data = Vec::with_capacity(n * (end - start));
        for i in 0..n {
            data.extend_from_slice(&x.row_slice(i)[start..end]);
        }
        let rg = self.rg(&[a]);
        self.push(
            DenseArray::matrix(n, end - start, data),
            Op::SliceCols(a, start),
            rg,
        )
    }

    /// Per-column affine map with constant coefficients: `x[i,j]*scale[j] + shift[j]`.
    pub fn col_affine(&mut self, a: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let x = self.value(a);
        let (n, m) = x.dims2();
        if scale.len() != m || shift.len() != m {
            return Err(Error::ShapeMismatch {
                op: "col_affine",
                lhs: x.shape().to_vec(),
                rhs: vec![scale.len()],
            });
        }
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(m.max(1)) {
            for j in 0..m {
                row[j] = row[j] * scale[j] + shift[j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            DenseArray::matrix(n, m, data),
            Op::ColAffine(a, scale.to_vec()),
            rg,
        ))
    }

    /// Batch-statistics normalization with learnable scale and shift.
    /// Returns the output and the (biased) per-column mean and variance.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let xv = self.value(x);
        let (n, m) = xv.dims2();
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        if self.value(gamma).len() != m || self.value(beta).len() != m {
            return Err(shape_err("batch_norm", xv, self.value(gamma)));
        }
        let xd = xv.data();
        let mut mean = vec![0.0; m];
        for row in xd.chunks(m) {
            for (s, v) in mean.iter_mut().zip(row) {
                *s += v;
            }
        }
        mean.iter_mut().for_each(|s| *s /= n as f64);
        let mut var = vec![0.0; m];
        for row in xd.chunks(m) {
            for j in 0..m {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; n * m];
        for (i, row) in xd.chunks(m).enumerate() {
            for j in 0..m {
                xhat[i * m + j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = g[j] * xhat[i * m + j] + b[j];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        let y = self.push(
            DenseArray::matrix(n, m, out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        );
        Ok((y, mean, var))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut out = Gradients::default();
        if !self.nodes[loss.0].requires_grad {
            return Ok(out);
        }
        let mut grads: Vec<Option<DenseArray>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(DenseArray::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    out.leaves.insert(idx, g);
                }
                Op::Param(id) => match out.params.get_mut(id) {
                    Some(acc) => acc.axpy(1.0, &g),
                    None => {
                        out.params.insert(*id, g);
                    }
                },
                op => self.propagate(op, &node.value, &g, &mut grads),
            }
        }
        Ok(out)
    }

    fn propagate(&self, op: &Op, y: &DenseArray, g: &DenseArray, grads: &mut [Option<DenseArray>]) {
        let gd = g.data();
        match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = self.value(*b).cols();
                if self.requires_grad(*a) {
                    let bv = self.value(*b).data();
                    let da = self.grad_buf(grads, *a);
                    gemm(m, n, k, gd, (n as isize, 1), bv, (1, n as isize), da, 1.0);
                }
                if self.requires_grad(*b) {
                    let av = self.value(*a).data();
                    let db = self.grad_buf(grads, *b);
                    gemm(k, m, n, av, (1, k as isize), gd, (n as isize, 1), db, 1.0);
                }
            }
            Op::Add(a, b) => {
                self.acc_map(grads, *a, |i, _| gd[i]);
                self.acc_map(grads, *b, |i, _| gd[i]);
            }
            Op::Sub(a, b) => {
                self.acc_map(grads, *a, |i, _| gd[i]);
                self.acc_map(grads, *b, |i, _| -gd[i]);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc_map(grads, *a, |i, _| gd[i] * bv[i]);
                self.acc_map(grads, *b, |i, _| gd[i] * av[i]);
            }
            Op::AddRow(a, row) => {
                self.acc_map(grads, *a, |i, _| gd[i]);
                if self.requires_grad(*row) {
                    let m = y.cols();
                    let dr = self.grad_buf(grads, *row);
                    for chunk in gd.chunks(m) {
                        for (d, v) in dr.iter_mut().zip(chunk) {
                            *d += v;
                        }
                    }
                }
            }
            Op::MulRow(a, row) => {
                let m = y.cols();
                let rv = self.value(*row).data();
                self.acc_map(grads, *a, |i, _| gd[i] * rv[i % m]);
                if self.requires_grad(*row) {
                    let av = self.value(*a).data();
                    let dr = self.grad_buf(grads, *row);
                    for (i, v) in gd.iter().enumerate() {
                        dr[i % m] += v * av[i];
                    }
                }
            }
            Op::MulCol(a, col) => {
                let m = y.cols();
                let cv = self.value(*col).data();
                self.acc_map(grads, *a, |i, _| gd[i] * cv[i / m]);
                if self.requires_grad(*col) {
                    let av = self.value(*a).data();
                    let dc = self.grad_buf(grads, *col);
                    for (i, v) in gd.iter().enumerate() {
                        dc[i / m] += v * av[i];
                    }
                }
            }
            Op::Scale(a, c) => self.acc_map(grads, *a, |i, _| c * gd[i]),
            Op::AddScalar(a) => self.acc_map(grads, *a, |i, _| gd[i]),
            Op::Relu(a) => self.acc_map(grads, *a, |i, x| if x > 0.0 { gd[i] } else { 0.0 }),
            Op::Gelu(a) => self.acc_map(grads, *a, |i, x| gd[i] * gelu_grad(x)),
            Op::Exp(a) => {
                let yd = y.data();
                self.acc_map(grads, *a, |i, _| gd[i] * yd[i]);
            }
            Op::Log(a) => self.acc_map(grads, *a, |i, x| gd[i] / x),
            Op::Square(a) => self.acc_map(grads, *a, |i, x| 2.0 * x * gd[i]),
            Op::ClampMin(a, floor) => {
                self.acc_map(grads, *a, |i, x| if x >= *floor { gd[i] } else { 0.0 })
            }
            Op::LogSoftmax(a) => {
                let m = y.cols();
                let yd = y.data();
                let row_sums: Vec<f64> = gd.chunks(m).map(|r| r.iter().sum()).collect();
                self.acc_map(grads, *a, |i, _| gd[i] - yd[i].exp() * row_sums[i / m]);
            }
            Op::SumAll(a) => {
                let s = gd[0];
                self.acc_map(grads, *a, |_, _| s);
            }
            Op::SumCols(a) => {
                let m = self.value(*a).cols();
                self.acc_map(grads, *a, |i, _| gd[i / m]);
            }
            Op::MeanRows(a) => {
                let (n, m) = self.value(*a).dims2();
                self.acc_map(grads, *a, |i, _| gd[i % m] / n as f64);
            }
            Op::ConcatCols(parts) => {
                let total = y.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.requires_grad(p) {
                        self.acc_map(grads, p, |i, _| gd[(i / w) * total + offset + i % w]);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.requires_grad(p) {
                        self.acc_map(grads, p, |i, _| gd[offset + i]);
                    }
                    offset += len;
                }
            }
            Op::SliceRows(a, start) => {
                if self.requires_grad(*a) {
                    let m = y.cols();
                    let da = self.grad_buf(grads, *a);
                    for (d, v) in da[start * m..start * m + gd.len()].iter_mut().zip(gd) {
                        *d += v;
                    }
                }
            }
            Op::SliceCols(a, start) => {
                if self.requires_grad(*a) {
                    let w = y.cols();
                    let m = self.value(*a).cols();
                    let da = self.grad_buf(grads, *a);
                    for (i, v) in gd.iter().enumerate() {
                        da[(i / w) * m + start + i % w] += v;
                    }
                }
            }
            Op::ColAffine(a, scale) => {
                let m = scale.len();
                self.acc_map(grads, *a, |i, _| gd[i] * scale[i % m]);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (n, m) = y.dims2();
                if self.requires_grad(*beta) {
                    let db = self.grad_buf(grads, *beta);
                    for row in gd.chunks(m) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                }
                if self.requires_grad(*gamma) {
                    let dg = self.grad_buf(grads, *gamma);
                    for (i, v) in gd.iter().enumerate() {
                        dg[i % m] += v * xhat[i];
                    }
                }
                if self.requires_grad(*x) {
                    let gv = self.value(*gamma).data();
                    let mut sum_dxhat = vec![0.0; m];
                    let mut sum_dxhat_xhat = vec![0.0; m];
                    for (i, v) in gd.iter().enumerate() {
                        let j = i % m;
                        let dxh = v * gv[j];
                        sum_dxhat[j] += dxh;
                        sum_dxhat_xhat[j] += dxh * xhat[i];
                    }
                    let nf = n as f64;
                    self.acc_map(grads, *x, |i, _| {
                        let j = i % m;
                        let dxh = gd[i] * gv[j];
                        inv_std[j] / nf * (nf * dxh - sum_dxhat[j] - xhat[i] * sum_dxhat_xhat[j])
                    });
                }
            }
        }
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<DenseArray>], v: Var) -> &'g mut [f64] {
        let shape = self.value(v).shape();
        grads[v.0]
            .get_or_insert_with(|| DenseArray::zeros(shape))
            .data_mut()
    }

    /// `grad[v][i] += f(i, value[v][i])` if `v` is differentiable.
    fn acc_map(&self, grads: &mut [Option<DenseArray>], v: Var, f: impl Fn(usize, f64) -> f64) {
        if !self.requires_grad(v) {
            return;
        }
        let xv = self.value(v).data();
        let buf = self.grad_buf(grads, v);
        for (i, d) in buf.iter_mut().enumerate() {
            *d += f(i, xv[i]);
        }
    }
}
