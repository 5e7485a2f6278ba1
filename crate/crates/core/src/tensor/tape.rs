//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every op in execution order, so the reverse sweep is a
//! plain walk from the loss node back to index zero. Parameters enter the tape
//! through [`Tape::param`] and receive their gradients in the owning
//! [`ParamStore`] when [`Tape::backward`] runs.

use rand::Rng;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{shape_err, ApanError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Binary(BinOp, Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SoftmaxRows(Var),
    MeanLast(Var),
    VarLast(Var),
    SumLast(Var),
    Sum(Var),
    Mean(Var),
    Sqrt(Var),
    Sigmoid(Var),
    Relu(Var),
    LogSigmoid(Var),
    Dropout(Var, Vec<f64>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    flops: u64,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

fn broadcast_dims(
    op: &'static str,
    a: (usize, usize),
    b: (usize, usize),
) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(shape_err(op, format!("cannot broadcast {a:?} with {b:?}"))),
    }
}

#[inline]
fn bidx(dims: (usize, usize), i: usize, j: usize) -> usize {
    let r = if dims.0 == 1 { 0 } else { i };
    let c = if dims.1 == 1 { 0 } else { j };
    r * dims.1 + c
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

    /// Approximate floating-point operation count of everything recorded.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, flops: usize) -> Var {
        self.flops += flops as u64;
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    /// Records a constant input. Gradients still flow to it and can be
    /// read back from [`Gradients`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, 0)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), 0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, k) = self.dims(a);
        let c = self.dims(b).1;
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), 2 * r * k * c))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let n = out.len();
        self.push(out, Op::Transpose(a), n)
    }

    fn binary(&mut self, op: BinOp, a: Var, b: Var) -> Result<Var> {
        let da = self.dims(a);
        let db = self.dims(b);
        let (r, c) = broadcast_dims(op.name(), da, db)?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                let x = av[bidx(da, i, j)];
                let y = bv[bidx(db, i, j)];
                out.push(match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                });
            }
        }
        let t = Tensor::from_rows(r, c, out)?;
        Ok(self.push(t, Op::Binary(op, a, b), r * c))
    }

    /// Elementwise `a + b`; either side may broadcast along a unit dimension.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Div, a, b)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let n = out.len();
        self.push(out, Op::Scale(a, s), n)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        let n = out.len();
        self.push(out, Op::AddScalar(a), n)
    }

    /// Concatenation along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| shape_err("concat", "no inputs"))?;
        let rows = self.dims(first).0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != rows {
                return Err(shape_err(
                    "concat",
                    format!("row count {r} differs from {rows}"),
                ));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let t = Tensor::from_rows(rows, total, out)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), rows * total))
    }

    /// Concatenation along the first axis (stacking rows).
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| shape_err("concat_rows", "no inputs"))?;
        let cols = self.dims(first).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != cols {
                return Err(shape_err(
                    "concat_rows",
                    format!("column count {c} differs from {cols}"),
                ));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::from_rows(rows, cols, out)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), rows * cols))
    }

    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(a);
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= r {
                return Err(shape_err(
                    "gather_rows",
                    format!("row {i} out of range for {r} rows"),
                ));
            }
            out.extend_from_slice(self.value(a).row(i));
        }
        let t = Tensor::from_rows(index.len(), c, out)?;
        Ok(self.push(t, Op::GatherRows(a, index.to_vec()), index.len() * c))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let x = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                out[i * c + j] = e;
                sum += e;
            }
            for o in &mut out[i * c..(i + 1) * c] {
                *o /= sum;
            }
        }
        let t = Tensor::from_rows(r, c, out).expect("softmax shape");
        self.push(t, Op::SoftmaxRows(a), 4 * r * c)
    }

    /// Mean over the last axis: `r x c -> r x 1`.
    pub fn mean_last(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let x = self.value(a);
        let out: Vec<f64> = (0..r)
            .map(|i| x.row(i).iter().sum::<f64>() / c as f64)
            .collect();
        let t = Tensor::from_rows(r, 1, out).expect("mean shape");
        self.push(t, Op::MeanLast(a), r * c)
    }

    /// Population variance over the last axis: `r x c -> r x 1`.
    pub fn var_last(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let x = self.value(a);
        let out: Vec<f64> = (0..r)
            .map(|i| {
                let row = x.row(i);
                let mu = row.iter().sum::<f64>() / c as f64;
                row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64
            })
            .collect();
        let t = Tensor::from_rows(r, 1, out).expect("var shape");
        self.push(t, Op::VarLast(a), 3 * r * c)
    }

    pub fn sum_last(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let x = self.value(a);
        let out: Vec<f64> = (0..r).map(|i| x.row(i).iter().sum()).collect();
        let t = Tensor::from_rows(r, 1, out).expect("sum shape");
        self.push(t, Op::SumLast(a), r * c)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let n = self.value(a).len();
        self.push(Tensor::scalar(s), Op::Sum(a), n)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let n = v.len();
        self.push(Tensor::scalar(s), Op::Mean(a), n)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::sqrt);
        let n = out.len();
        self.push(out, Op::Sqrt(a), n)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let n = out.len();
        self.push(out, Op::Sigmoid(a), 4 * n)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let n = out.len();
        self.push(out, Op::Relu(a), n)
    }

    /// Numerically stable `ln(sigmoid(x))`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(log_sigmoid);
        let n = out.len();
        self.push(out, Op::LogSigmoid(a), 4 * n)
    }

    /// Inverted dropout: identity when `training` is false or `p == 0`,
    /// otherwise zeroes entries with probability `p` and scales survivors by
    /// `1 / (1 - p)`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(ApanError::InvalidArgument(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mut out = self.value(a).clone();
        for (o, m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        Ok(self.push(out, Op::Dropout(a, mask), n))
    }

    /// Reverse sweep from a scalar `loss`. Parameter gradients accumulate
    /// into `store`; gradients of every recorded leaf are returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(shape_err(
                "backward",
                format!("loss must be scalar, got shape {:?}", lv.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(lv.map(|_| 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Param(id) => {
                    store.accumulate_grad(*id, &g);
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let ga = g.matmul(&bv.transpose())?;
                    let gb = av.transpose().matmul(&g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::Binary(op, a, b) => {
                    let da = self.dims(*a);
                    let db = self.dims(*b);
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let (r, c) = g.dims2();
                    let mut ga = vec![0.0; da.0 * da.1];
                    let mut gb = vec![0.0; db.0 * db.1];
                    let gd = g.data();
                    for ii in 0..r {
                        for jj in 0..c {
                            let gij = gd[ii * c + jj];
                            let ia = bidx(da, ii, jj);
                            let ib = bidx(db, ii, jj);
                            let (x, y) = (av[ia], bv[ib]);
                            let (dx, dy) = match op {
                                BinOp::Add => (gij, gij),
                                BinOp::Sub => (gij, -gij),
                                BinOp::Mul => (gij * y, gij * x),
                                BinOp::Div => (gij / y, -gij * x / (y * y)),
                            };
                            ga[ia] += dx;
                            gb[ib] += dy;
                        }
                    }
                    let ga = Tensor::new(self.value(*a).shape().to_vec(), ga)?;
                    let gb = Tensor::new(self.value(*b).shape().to_vec(), gb)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.map(|x| x * s)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::ConcatCols(parts) => {
                    let (rows, total) = g.dims2();
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.dims(p).1;
                        let mut gp = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            let start = r * total + offset;
                            gp.extend_from_slice(&g.data()[start..start + pc]);
                        }
                        offset += pc;
                        let gp = Tensor::new(self.value(p).shape().to_vec(), gp)?;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        let gp = g.data()[offset..offset + n].to_vec();
                        offset += n;
                        let gp = Tensor::new(self.value(p).shape().to_vec(), gp)?;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::GatherRows(a, index) => {
                    let src = self.value(*a);
                    let c = src.cols();
                    let mut ga = src.zeros_like();
                    for (k, &row) in index.iter().enumerate() {
                        let gd = &g.data()[k * c..(k + 1) * c];
                        for (dst, v) in ga.data_mut()[row * c..(row + 1) * c].iter_mut().zip(gd) {
                            *dst += v;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let (r, c) = y.dims2();
                    let mut ga = vec![0.0; r * c];
                    for ii in 0..r {
                        let yr = y.row(ii);
                        let gr = &g.data()[ii * c..(ii + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for jj in 0..c {
                            ga[ii * c + jj] = yr[jj] * (gr[jj] - dot);
                        }
                    }
                    let ga = Tensor::new(self.value(*a).shape().to_vec(), ga)?;
                    accumulate(&mut grads, *a, ga);
                }
                Op::MeanLast(a) => {
                    let x = self.value(*a);
                    let c = x.cols();
                    let mut ga = x.zeros_like();
                    for (k, v) in ga.data_mut().iter_mut().enumerate() {
                        *v = g.data()[k / c] / c as f64;
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::VarLast(a) => {
                    let x = self.value(*a);
                    let (r, c) = x.dims2();
                    let mut ga = x.zeros_like();
                    for ii in 0..r {
                        let row = x.row(ii);
                        let mu = row.iter().sum::<f64>() / c as f64;
                        let gi = g.data()[ii];
                        for (jj, &x) in row.iter().enumerate() {
                            ga.data_mut()[ii * c + jj] = gi * 2.0 * (x - mu) / c as f64;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumLast(a) => {
                    let x = self.value(*a);
                    let c = x.cols();
                    let mut ga = x.zeros_like();
                    for (k, v) in ga.data_mut().iter_mut().enumerate() {
                        *v = g.data()[k / c];
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    accumulate(&mut grads, *a, self.value(*a).map(|_| gv));
                }
                Op::Mean(a) => {
                    let x = self.value(*a);
                    let gv = g.data()[0] / x.len() as f64;
                    accumulate(&mut grads, *a, x.map(|_| gv));
                }
                Op::Sqrt(a) => {
                    let ga = elementwise(&g, &node.value, |gi, y| gi / (2.0 * y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = elementwise(&g, &node.value, |gi, y| gi * y * (1.0 - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = elementwise(&g, self.value(*a), |gi, x| if x > 0.0 { gi } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogSigmoid(a) => {
                    let ga = elementwise(&g, self.value(*a), |gi, x| gi * sigmoid(-x));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Dropout(a, mask) => {
                    let mut ga = g.clone();
                    for (v, m) in ga.data_mut().iter_mut().zip(mask) {
                        *v *= m;
                    }
                    accumulate(&mut grads, *a, ga);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn elementwise(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let mut out = x.zeros_like();
    for ((o, gi), xi) in out.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
        *o = f(*gi, *xi);
    }
    out
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
