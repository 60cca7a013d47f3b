//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its forward value, so node indices
//! are already in topological order and the reverse sweep is a single pass
//! from the loss back to index zero.

use crate::error::{Error, Result};
use crate::tensor::{matmul_into, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Offset(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Powf(Var, f64),
    Clamp(Var, f64, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Sum(Var, Option<usize>),
    Mean(Var, Option<usize>),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when `v` did not influence the loss.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

/// Output shape of a trailing-aligned broadcast, numpy style.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for k in 0..rank {
        let da = if k + a.len() >= rank { a[k + a.len() - rank] } else { 1 };
        let db = if k + b.len() >= rank { b[k + b.len() - rank] } else { 1 };
        out[k] = match (da, db) {
            _ if da == db => da,
            (1, _) => db,
            (_, 1) => da,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat output index, the flat index into an operand of shape `inp`.
fn broadcast_map(out: &[usize], inp: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - inp.len();
    let mut in_strides = vec![0; rank];
    let mut stride = 1;
    for k in (0..inp.len()).rev() {
        in_strides[k + offset] = if inp[k] == 1 { 0 } else { stride };
        stride *= inp[k];
    }
    let total: usize = out.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..total {
        map.push(flat);
        for k in (0..rank).rev() {
            idx[k] += 1;
            flat += in_strides[k];
            if idx[k] < out[k] {
                break;
            }
            flat -= in_strides[k] * idx[k];
            idx[k] = 0;
        }
    }
    map
}

/// Splits `shape` around `axis` into (outer, axis length, inner).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.nodes[x.0].value.map(f);
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let va = self.nodes[a.0].value.data();
        let vb = self.nodes[b.0].value.data();
        let (shape, data) = if sa == sb {
            let data = va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect();
            (sa, data)
        } else {
            let shape = broadcast_shape(&sa, &sb).ok_or_else(|| Error::shape(name, &sa, &sb))?;
            let ma = broadcast_map(&shape, &sa);
            let mb = broadcast_map(&shape, &sb);
            let data = ma.iter().zip(&mb).map(|(&i, &j)| f(va[i], vb[j])).collect();
            (shape, data)
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().contains(&0.0) {
            return Err(Error::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, Op::Neg(x), |v| -v)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), move |v| c * v)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Offset(x), move |v| v + c)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Op::Softplus(x), softplus)
    }

    /// Natural log. Non-positive inputs are a domain error; clip first.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(&bad) = self.value(x).data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(x, Op::Log(x), f64::ln))
    }

    pub fn powf(&mut self, x: Var, p: f64) -> Result<Var> {
        let v = self.unary(x, Op::Powf(x, p), move |v| v.powf(p));
        if !self.value(v).all_finite() {
            self.nodes.pop();
            return Err(Error::Domain {
                op: "powf",
                detail: format!("non-finite result for exponent {p}"),
            });
        }
        Ok(v)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping was active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp(x, lo, hi), move |v| v.clamp(lo, hi))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose()?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    fn reduce(&mut self, x: Var, axis: Option<usize>, mean: bool) -> Result<Var> {
        let t = self.value(x);
        let value = match axis {
            None => {
                let s = t.sum();
                Tensor::scalar(if mean { s / t.len() as f64 } else { s })
            }
            Some(axis) => {
                if axis >= t.rank() {
                    return Err(Error::Axis {
                        axis,
                        rank: t.rank(),
                    });
                }
                let (outer, n, inner) = axis_split(t.shape(), axis);
                let mut out = vec![0.0; outer * inner];
                let d = t.data();
                for o in 0..outer {
                    for a in 0..n {
                        let src = &d[(o * n + a) * inner..(o * n + a + 1) * inner];
                        for (dst, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *dst += s;
                        }
                    }
                }
                if mean {
                    out.iter_mut().for_each(|v| *v /= n as f64);
                }
                let mut shape = t.shape().to_vec();
                shape.remove(axis);
                Tensor::new(shape, out)?
            }
        };
        let op = if mean { Op::Mean(x, axis) } else { Op::Sum(x, axis) };
        let rg = self.rg(&[x]);
        Ok(self.push(value, op, rg))
    }

    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(x, axis, false)
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(x, axis, true)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        self.reduce(x, None, false).expect("full reduction cannot fail")
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.cols() != cols {
                return Err(Error::shape("concat_rows", self.shape(parts[0]), t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(vec![rows, cols], data)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.rows() != rows {
                return Err(Error::shape("concat_cols", self.shape(parts[0]), t.shape()));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(vec![rows, cols], data)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || start > end || end > t.rows() {
            return Err(Error::Invalid(format!(
                "row slice {start}..{end} of shape {:?}",
                t.shape()
            )));
        }
        let c = t.cols();
        let value = Tensor::new(vec![end - start, c], t.data()[start * c..end * c].to_vec())?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SliceRows(x, start), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(shape, 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += x;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    /// Sums a broadcast gradient back down to the operand's shape.
    fn unbroadcast(&self, g: &Tensor, to: Var) -> Tensor {
        let shape = self.shape(to);
        if g.shape() == shape {
            return g.clone();
        }
        let map = broadcast_map(g.shape(), shape);
        let mut out = Tensor::zeros(shape);
        let od = out.data_mut();
        for (&j, &gv) in map.iter().zip(g.data()) {
            od[j] += gv;
        }
        out
    }

    /// Values of `other` aligned to `g`'s (broadcast) shape.
    fn expanded(&self, v: Var, out_shape: &[usize]) -> Vec<f64> {
        let t = self.value(v);
        if t.shape() == out_shape {
            return t.data().to_vec();
        }
        let d = t.data();
        broadcast_map(out_shape, t.shape())
            .into_iter()
            .map(|j| d[j])
            .collect()
    }

    fn local(&self, x: Var, g: &Tensor, out: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let xd = self.value(x).data();
        let data = g
            .data()
            .iter()
            .zip(xd.iter().zip(out.data()))
            .map(|(&gv, (&xv, &yv))| gv * f(xv, yv))
            .collect();
        Tensor::new(g.shape().to_vec(), data).expect("shape preserved")
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                self.accum(grads, a, self.unbroadcast(g, a));
                self.accum(grads, b, self.unbroadcast(g, b));
            }
            &Op::Sub(a, b) => {
                self.accum(grads, a, self.unbroadcast(g, a));
                let neg = g.map(|v| -v);
                self.accum(grads, b, self.unbroadcast(&neg, b));
            }
            &Op::Mul(a, b) => {
                let va = self.expanded(a, g.shape());
                let vb = self.expanded(b, g.shape());
                if self.requires_grad(a) {
                    let ga = zip_tensor(g, &vb, |gv, y| gv * y);
                    self.accum(grads, a, self.unbroadcast(&ga, a));
                }
                if self.requires_grad(b) {
                    let gb = zip_tensor(g, &va, |gv, x| gv * x);
                    self.accum(grads, b, self.unbroadcast(&gb, b));
                }
            }
            &Op::Div(a, b) => {
                let va = self.expanded(a, g.shape());
                let vb = self.expanded(b, g.shape());
                if self.requires_grad(a) {
                    let ga = zip_tensor(g, &vb, |gv, y| gv / y);
                    self.accum(grads, a, self.unbroadcast(&ga, a));
                }
                if self.requires_grad(b) {
                    let q: Vec<f64> = va.iter().zip(&vb).map(|(x, y)| -x / (y * y)).collect();
                    let gb = zip_tensor(g, &q, |gv, d| gv * d);
                    self.accum(grads, b, self.unbroadcast(&gb, b));
                }
            }
            &Op::Neg(x) => self.accum(grads, x, g.map(|v| -v)),
            &Op::Scale(x, c) => self.accum(grads, x, g.map(|v| c * v)),
            &Op::Offset(x) => self.accum(grads, x, g.clone()),
            &Op::Sigmoid(x) => {
                let d = self.local(x, g, out, |_, s| s * (1.0 - s));
                self.accum(grads, x, d);
            }
            &Op::Relu(x) => {
                let d = self.local(x, g, out, |xv, _| if xv > 0.0 { 1.0 } else { 0.0 });
                self.accum(grads, x, d);
            }
            &Op::Exp(x) => {
                let d = self.local(x, g, out, |_, y| y);
                self.accum(grads, x, d);
            }
            &Op::Log(x) => {
                let d = self.local(x, g, out, |xv, _| 1.0 / xv);
                self.accum(grads, x, d);
            }
            &Op::Softplus(x) => {
                let d = self.local(x, g, out, |xv, _| sigmoid(xv));
                self.accum(grads, x, d);
            }
            &Op::Powf(x, p) => {
                let d = self.local(x, g, out, |xv, _| p * xv.powf(p - 1.0));
                self.accum(grads, x, d);
            }
            &Op::Clamp(x, lo, hi) => {
                let d = self.local(x, g, out, |xv, _| {
                    if xv >= lo && xv <= hi {
                        1.0
                    } else {
                        0.0
                    }
                });
                self.accum(grads, x, d);
            }
            &Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.requires_grad(a) {
                    let bt = tb.transpose().expect("matrix");
                    let mut ga = vec![0.0; m * k];
                    matmul_into(g.data(), bt.data(), &mut ga, m, n, k);
                    self.accum(grads, a, Tensor::new(vec![m, k], ga).expect("shape"));
                }
                if self.requires_grad(b) {
                    let at = ta.transpose().expect("matrix");
                    let mut gb = vec![0.0; k * n];
                    matmul_into(at.data(), g.data(), &mut gb, k, m, n);
                    self.accum(grads, b, Tensor::new(vec![k, n], gb).expect("shape"));
                }
            }
            &Op::Transpose(x) => self.accum(grads, x, g.transpose().expect("matrix")),
            &Op::Reshape(x) => {
                let shape = self.shape(x).to_vec();
                self.accum(grads, x, g.clone().reshape(&shape).expect("same size"));
            }
            &Op::Sum(x, axis) | &Op::Mean(x, axis) => {
                let mean = matches!(self.nodes[i].op, Op::Mean(..));
                let shape = self.shape(x).to_vec();
                let total: usize = shape.iter().product();
                let gx = match axis {
                    None => {
                        let s = if mean { g.item() / total as f64 } else { g.item() };
                        Tensor::full(&shape, s)
                    }
                    Some(axis) => {
                        let (outer, n, inner) = axis_split(&shape, axis);
                        let c = if mean { 1.0 / n as f64 } else { 1.0 };
                        let gd = g.data();
                        let mut data = vec![0.0; total];
                        for o in 0..outer {
                            for a in 0..n {
                                for k in 0..inner {
                                    data[(o * n + a) * inner + k] = c * gd[o * inner + k];
                                }
                            }
                        }
                        Tensor::new(shape, data).expect("shape")
                    }
                };
                self.accum(grads, x, gx);
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut start = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    let data = g.data()[start * cols..(start + r) * cols].to_vec();
                    self.accum(grads, p, Tensor::new(vec![r, cols], data).expect("shape"));
                    start += r;
                }
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut start = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    let cols: Vec<usize> = (start..start + c).collect();
                    if self.requires_grad(p) {
                        self.accum(grads, p, g.select_cols(&cols));
                    }
                    debug_assert_eq!(rows, self.value(p).rows());
                    start += c;
                }
            }
            &Op::SliceRows(x, start) => {
                let shape = self.shape(x).to_vec();
                let mut gx = Tensor::zeros(&shape);
                let c = shape[1];
                gx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                self.accum(grads, x, gx);
            }
        }
    }
}

fn zip_tensor(g: &Tensor, other: &[f64], f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(other).map(|(&a, &b)| f(a, b)).collect();
    Tensor::new(g.shape().to_vec(), data).expect("shape preserved")
}
