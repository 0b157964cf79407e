//! Wengert-list autodiff.
//!
//! Every operation appends a node whose parents have smaller indices, so the
//! node order is already topological. `backward` walks the list once in
//! reverse and the tape refuses a second pass.

use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::params::{ParamGrads, ParamId, ParamSet};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatVec(Var, Var),
    VecMat(Var, Var),
    Affine(Var, Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBroadcast(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Ln(Var, f64),
    Sum(Var),
    Softmax { x: Var, axis: usize },
    Transpose(Var),
    Concat(Vec<Var>),
    ConcatCols(Var, Var),
    Slice { x: Var, start: usize },
    StackRows(Vec<Var>),
    VStack(Vec<Var>),
    GatherRows { src: Var, rows: Vec<Option<usize>> },
    Reshape(Var),
    Pick(Var, usize),
    RepeatEach(Var, usize),
    MeanRows(Var),
    LstmCell { z: Var, c_prev: Var },
    LstmSeq(Box<LstmSeqSaved>),
}

#[derive(Debug)]
struct LstmSeqSaved {
    x: Var,
    wx: Var,
    wh: Var,
    b: Var,
    reverse: bool,
    /// Activated gates (i, f, g, o) per processed step, in processing order.
    gates: Vec<f64>,
    /// Cell state per processed step, in processing order.
    cells: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    consumed: bool,
}

/// Gradients of a scalar root with respect to every recorded node.
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    /// Collects parameter gradients into a per-parameter table of length `n_params`.
    pub fn into_param_grads(mut self, n_params: usize) -> ParamGrads {
        let mut out = vec![None; n_params];
        for (pid, var) in &self.params {
            out[pid.index()] = self.nodes[var.0].take();
        }
        ParamGrads(out)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
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

fn softmax_slices(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    // (number of slices, slice length, stride between consecutive slice entries)
    match (shape.len(), axis) {
        (0, _) => (1, 1, 1),
        (1, _) => (1, shape[0], 1),
        (_, 0) => (shape[1], shape[0], shape[1]),
        _ => (shape[0], shape[1], 1),
    }
}

fn slice_offset(shape: &[usize], axis: usize, s: usize) -> usize {
    if shape.len() == 2 && axis == 1 {
        s * shape[1]
    } else {
        s
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite result from {op:?}");
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check_finite(t: &Tensor, op: &'static str) -> Result<()> {
        if t.is_finite() {
            Ok(())
        } else {
            Err(TensorError::NonFinite(op))
        }
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        Self::check_finite(&t, "constant")?;
        let t = Tensor::new(t.shape().to_vec(), t.into_values())?;
        Ok(self.push(t, Op::Leaf, false))
    }

    /// Records a differentiable input that is not part of a [`ParamSet`].
    pub fn variable(&mut self, t: Tensor) -> Result<Var> {
        Self::check_finite(&t, "variable")?;
        let t = Tensor::new(t.shape().to_vec(), t.into_values())?;
        Ok(self.push(t, Op::Leaf, true))
    }

    /// Records a parameter. Repeated calls for the same id return the same node.
    pub fn param(&mut self, set: &ParamSet, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.params.get(&id) {
            return Ok(v);
        }
        let p = set.get(id);
        Self::check_finite(p, "param")?;
        let value = Tensor::new(p.shape().to_vec(), p.values().to_vec())?;
        let v = self.push(value, Op::Param, true);
        self.params.insert(id, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err("matmul", ta, tb));
        }
        if !ta.is_finite() || !tb.is_finite() {
            return Err(TensorError::NonFinite("matmul"));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let (av, bv) = (ta.values(), tb.values());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                for (o, bpj) in orow.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                    *o += aip * bpj;
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), needs))
    }

    /// `a[m×k] · x[k] -> [m]`
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let (ta, tx) = (self.value(a), self.value(x));
        if ta.rank() != 2 || tx.rank() != 1 || ta.shape()[1] != tx.len() {
            return Err(shape_err("matvec", ta, tx));
        }
        let out = matvec_raw(ta.values(), ta.shape()[0], ta.shape()[1], tx.values());
        let needs = self.needs(a) || self.needs(x);
        Ok(self.push(Tensor::vector(out), Op::MatVec(a, x), needs))
    }

    /// `x[k] · a[k×n] -> [n]`, i.e. a weighted sum of the rows of `a`.
    pub fn vecmat(&mut self, x: Var, a: Var) -> Result<Var> {
        let (tx, ta) = (self.value(x), self.value(a));
        if ta.rank() != 2 || tx.rank() != 1 || ta.shape()[0] != tx.len() {
            return Err(shape_err("vecmat", tx, ta));
        }
        let n = ta.shape()[1];
        let mut out = vec![0.0; n];
        for (p, &w) in tx.values().iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(ta.row(p)) {
                *o += w * v;
            }
        }
        let needs = self.needs(a) || self.needs(x);
        Ok(self.push(Tensor::vector(out), Op::VecMat(x, a), needs))
    }

    /// `w[m×k] · x[k] + b[m]`
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let (tw, tx, tb) = (self.value(w), self.value(x), self.value(b));
        if tw.rank() != 2 || tx.rank() != 1 || tw.shape()[1] != tx.len() {
            return Err(shape_err("affine", tw, tx));
        }
        if tb.shape() != [tw.shape()[0]] {
            return Err(shape_err("affine", tw, tb));
        }
        let mut out = matvec_raw(tw.values(), tw.shape()[0], tw.shape()[1], tx.values());
        out.iter_mut().zip(tb.values()).for_each(|(o, b)| *o += b);
        let needs = self.needs(w) || self.needs(x) || self.needs(b);
        Ok(self.push(Tensor::vector(out), Op::Affine(w, x, b), needs))
    }

    fn elementwise(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let out: Vec<f64> = ta.values().iter().zip(tb.values()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds vector `b[m]` to every row of `x[n×m]`.
    pub fn add_row_broadcast(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        if tx.rank() != 2 || tb.shape() != [tx.shape()[1]] {
            return Err(shape_err("add_row_broadcast", tx, tb));
        }
        let m = tx.shape()[1];
        let out: Vec<f64> = tx
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| v + tb.values()[i % m])
            .collect();
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(t, Op::AddRowBroadcast(x, b), needs))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let tx = self.value(x);
        let out = tx.values().iter().map(|v| f(*v)).collect();
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let needs = self.needs(x);
        Ok(self.push(t, op, needs))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, |v| c * v, Op::Scale(x, c))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    /// `ln(x + eps)`; callers pass a positive floor.
    pub fn ln(&mut self, x: Var, eps: f64) -> Result<Var> {
        if self.value(x).values().iter().any(|v| v + eps <= 0.0) {
            return Err(TensorError::NonFinite("ln"));
        }
        self.unary(x, |v| (v + eps).ln(), Op::Ln(x, eps))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).values().iter().sum();
        let needs = self.needs(x);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), needs))
    }

    /// Softmax along `axis` without a mask.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.masked_softmax(x, axis, None)
    }

    /// Max-stabilised softmax along `axis` (0 = down columns, 1 = along rows for
    /// matrices; vectors have a single axis). Masked entries are exactly zero
    /// and excluded from normalisation.
    pub fn masked_softmax(&mut self, x: Var, axis: usize, mask: Option<&[bool]>) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() > 2 || (tx.rank() == 2 && axis > 1) || (tx.rank() < 2 && axis > 0) {
            return Err(TensorError::ShapeMismatch {
                op: "masked_softmax",
                lhs: tx.shape().to_vec(),
                rhs: vec![axis],
            });
        }
        if let Some(m) = mask {
            if m.len() != tx.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "masked_softmax",
                    lhs: tx.shape().to_vec(),
                    rhs: vec![m.len()],
                });
            }
        }
        let out = softmax_values(tx.values(), tx.shape(), axis, mask)?;
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Softmax { x, axis }, needs))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 {
            return Err(shape_err("transpose", tx, tx));
        }
        let (r, c) = (tx.shape()[0], tx.shape()[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = tx.values()[i * c + j];
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::matrix(c, r, out)?, Op::Transpose(x), needs))
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 1 {
                return Err(shape_err("concat", t, t));
            }
            out.extend_from_slice(t.values());
        }
        if out.is_empty() {
            return Err(TensorError::InvalidShape {
                shape: vec![0],
                len: 0,
            });
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::vector(out), Op::Concat(parts.to_vec()), needs))
    }

    /// `[a | b]` for matrices with the same row count.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[0] != tb.shape()[0] {
            return Err(shape_err("concat_cols", ta, tb));
        }
        let (r, ca, cb) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            out.extend_from_slice(ta.row(i));
            out.extend_from_slice(tb.row(i));
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::matrix(r, ca + cb, out)?, Op::ConcatCols(a, b), needs))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 1 || start + len > tx.len() || len == 0 {
            return Err(TensorError::IndexOutOfRange {
                op: "slice",
                index: start + len,
                extent: tx.len(),
            });
        }
        let out = tx.values()[start..start + len].to_vec();
        let needs = self.needs(x);
        Ok(self.push(Tensor::vector(out), Op::Slice { x, start }, needs))
    }

    /// Stacks equal-length vectors into a matrix, one per row.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(TensorError::InvalidShape {
                shape: vec![0],
                len: 0,
            });
        };
        let width = self.value(first).len();
        let mut out = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            let t = self.value(r);
            if t.rank() != 1 || t.len() != width {
                return Err(shape_err("stack_rows", self.value(first), t));
            }
            out.extend_from_slice(t.values());
        }
        let needs = rows.iter().any(|&r| self.needs(r));
        Ok(self.push(
            Tensor::matrix(rows.len(), width, out)?,
            Op::StackRows(rows.to_vec()),
            needs,
        ))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::InvalidShape {
                shape: vec![0],
                len: 0,
            });
        };
        let cols = self.value(first).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.cols() != cols {
                return Err(shape_err("vstack", self.value(first), t));
            }
            rows += t.rows();
            out.extend_from_slice(t.values());
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::matrix(rows, cols, out)?, Op::VStack(parts.to_vec()), needs))
    }

    /// Builds a matrix whose row `r` is `src[rows[r]]`, or zeros for `None`.
    pub fn gather_rows(&mut self, src: Var, rows: &[Option<usize>]) -> Result<Var> {
        let ts = self.value(src);
        if ts.rank() != 2 {
            return Err(shape_err("gather_rows", ts, ts));
        }
        let (n, c) = (ts.shape()[0], ts.shape()[1]);
        let mut out = vec![0.0; rows.len() * c];
        for (r, idx) in rows.iter().enumerate() {
            if let Some(i) = *idx {
                if i >= n {
                    return Err(TensorError::IndexOutOfRange {
                        op: "gather_rows",
                        index: i,
                        extent: n,
                    });
                }
                out[r * c..(r + 1) * c].copy_from_slice(ts.row(i));
            }
        }
        let needs = self.needs(src);
        Ok(self.push(
            Tensor::matrix(rows.len(), c, out)?,
            Op::GatherRows {
                src,
                rows: rows.to_vec(),
            },
            needs,
        ))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let g = self.gather_rows(x, &[Some(i)])?;
        let c = self.value(g).cols();
        self.reshape(g, &[c])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let t = Tensor::new(shape.to_vec(), tx.values().to_vec())?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Reshape(x), needs))
    }

    /// Flattens any tensor into a vector.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        self.reshape(x, &[n])
    }

    /// Scalar entry `i` of a vector.
    pub fn pick(&mut self, x: Var, i: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 1 || i >= tx.len() {
            return Err(TensorError::IndexOutOfRange {
                op: "pick",
                index: i,
                extent: tx.len(),
            });
        }
        let v = tx.values()[i];
        let needs = self.needs(x);
        Ok(self.push(Tensor::scalar(v), Op::Pick(x, i), needs))
    }

    /// `[a, b] -> [a, a, .., b, b, ..]` with each entry repeated `times` times.
    pub fn repeat_each(&mut self, x: Var, times: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 1 || times == 0 {
            return Err(shape_err("repeat_each", tx, tx));
        }
        let out = tx
            .values()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, times))
            .collect();
        let needs = self.needs(x);
        Ok(self.push(Tensor::vector(out), Op::RepeatEach(x, times), needs))
    }

    /// Column means of a matrix.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 {
            return Err(shape_err("mean_rows", tx, tx));
        }
        let (r, c) = (tx.shape()[0], tx.shape()[1]);
        let mut out = vec![0.0; c];
        for i in 0..r {
            out.iter_mut().zip(tx.row(i)).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        let needs = self.needs(x);
        Ok(self.push(Tensor::vector(out), Op::MeanRows(x), needs))
    }

    /// One LSTM cell update from gate pre-activations `z = [i; f; g; o]` (each
    /// of width h) and the previous cell state. Returns `[h_new; c_new]`.
    pub fn lstm_cell(&mut self, z: Var, c_prev: Var) -> Result<Var> {
        let (tz, tc) = (self.value(z), self.value(c_prev));
        let h = tc.len();
        if tz.rank() != 1 || tc.rank() != 1 || tz.len() != 4 * h {
            return Err(shape_err("lstm_cell", tz, tc));
        }
        let zv = tz.values();
        let mut out = vec![0.0; 2 * h];
        for j in 0..h {
            let i = sigmoid(zv[j]);
            let f = sigmoid(zv[h + j]);
            let g = zv[2 * h + j].tanh();
            let o = sigmoid(zv[3 * h + j]);
            let c = f * tc.values()[j] + i * g;
            out[j] = o * c.tanh();
            out[h + j] = c;
        }
        let needs = self.needs(z) || self.needs(c_prev);
        Ok(self.push(Tensor::vector(out), Op::LstmCell { z, c_prev }, needs))
    }

    /// Runs a unidirectional LSTM over the rows of `x[T×in]` from zero initial
    /// state. `wx[4h×in]`, `wh[4h×h]`, `b[4h]` use gate order (i, f, g, o).
    /// Output row `t` is the hidden state after consuming row `t`; with
    /// `reverse` the rows are consumed from last to first.
    pub fn lstm_sequence(&mut self, x: Var, wx: Var, wh: Var, b: Var, reverse: bool) -> Result<Var> {
        let (tx, twx, twh, tb) = (self.value(x), self.value(wx), self.value(wh), self.value(b));
        if tx.rank() != 2 || twx.rank() != 2 || twh.rank() != 2 {
            return Err(shape_err("lstm_sequence", tx, twx));
        }
        let (steps, input) = (tx.shape()[0], tx.shape()[1]);
        let h = twh.shape()[1];
        if twx.shape() != [4 * h, input] || twh.shape() != [4 * h, h] || tb.shape() != [4 * h] {
            return Err(shape_err("lstm_sequence", twx, twh));
        }
        let mut out = vec![0.0; steps * h];
        let mut gates = vec![0.0; steps * 4 * h];
        let mut cells = vec![0.0; steps * h];
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for s in 0..steps {
            let t = if reverse { steps - 1 - s } else { s };
            let mut z = matvec_raw(twx.values(), 4 * h, input, tx.row(t));
            let zh = matvec_raw(twh.values(), 4 * h, h, &h_prev);
            for ((zi, a), bb) in z.iter_mut().zip(&zh).zip(tb.values()) {
                *zi += a + bb;
            }
            let gs = &mut gates[s * 4 * h..(s + 1) * 4 * h];
            for j in 0..h {
                let i = sigmoid(z[j]);
                let f = sigmoid(z[h + j]);
                let g = z[2 * h + j].tanh();
                let o = sigmoid(z[3 * h + j]);
                let c = f * c_prev[j] + i * g;
                gs[j] = i;
                gs[h + j] = f;
                gs[2 * h + j] = g;
                gs[3 * h + j] = o;
                cells[s * h + j] = c;
                c_prev[j] = c;
                h_prev[j] = o * c.tanh();
            }
            out[t * h..(t + 1) * h].copy_from_slice(&h_prev);
        }
        let needs = self.needs(x) || self.needs(wx) || self.needs(wh) || self.needs(b);
        let saved = LstmSeqSaved {
            x,
            wx,
            wh,
            b,
            reverse,
            gates,
            cells,
        };
        Ok(self.push(Tensor::matrix(steps, h, out)?, Op::LstmSeq(Box::new(saved)), needs))
    }

    /// Reverse pass from a scalar `root`, seeded with `seed`.
    ///
    /// Each node is visited once in reverse recording order. The tape cannot
    /// be differentiated twice.
    pub fn backward_seeded(&mut self, root: Var, seed: f64) -> Result<Gradients> {
        if self.consumed {
            return Err(TensorError::StaleGraph);
        }
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(TensorError::NonScalarRoot(rv.shape().to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![seed]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].needs_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        let mut params: Vec<(ParamId, Var)> = self.params.iter().map(|(p, v)| (*p, *v)).collect();
        params.sort();
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        self.backward_seeded(root, 1.0)
    }

    /// Backward pass that adds `scale * ∂root/∂p` into each parameter's gradient.
    pub fn backward_into(&mut self, root: Var, params: &mut ParamSet, scale: f64) -> Result<()> {
        let grads = self.backward(root)?;
        params.accumulate(&grads.into_param_grads(params.len()), scale);
        params.ensure_grads();
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let node = &nodes[idx];
        let y = node.value.values();
        macro_rules! buf {
            ($v:expr) => {
                slot(nodes, grads, $v)
            };
        }
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if let Some(ga) = buf!(*a) {
                    for i in 0..m {
                        for p in 0..k {
                            let brow = &tb.values()[p * n..(p + 1) * n];
                            let grow = &g[i * n..(i + 1) * n];
                            ga[i * k + p] += dot(grow, brow);
                        }
                    }
                }
                if let Some(gb) = buf!(*b) {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ta.values()[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += aip * gv;
                            }
                        }
                    }
                }
            }
            Op::MatVec(a, x) | Op::Affine(a, x, _) => {
                let (ta, tx) = (&nodes[a.0].value, &nodes[x.0].value);
                let k = ta.shape()[1];
                if let Some(ga) = buf!(*a) {
                    for (i, gi) in g.iter().enumerate() {
                        for (o, xv) in ga[i * k..(i + 1) * k].iter_mut().zip(tx.values()) {
                            *o += gi * xv;
                        }
                    }
                }
                if let Some(gx) = buf!(*x) {
                    for (i, gi) in g.iter().enumerate() {
                        for (o, av) in gx.iter_mut().zip(ta.row(i)) {
                            *o += gi * av;
                        }
                    }
                }
                if let Op::Affine(_, _, b) = &node.op {
                    if let Some(gb) = buf!(*b) {
                        gb.iter_mut().zip(g).for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::VecMat(x, a) => {
                let (tx, ta) = (&nodes[x.0].value, &nodes[a.0].value);
                let n = ta.shape()[1];
                if let Some(gx) = buf!(*x) {
                    for (p, o) in gx.iter_mut().enumerate() {
                        *o += dot(ta.row(p), g);
                    }
                }
                if let Some(ga) = buf!(*a) {
                    for (p, &w) in tx.values().iter().enumerate() {
                        for (o, gv) in ga[p * n..(p + 1) * n].iter_mut().zip(g) {
                            *o += w * gv;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = buf!(v) {
                        gv.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = buf!(*a) {
                    ga.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                }
                if let Some(gb) = buf!(*b) {
                    gb.iter_mut().zip(g).for_each(|(o, x)| *o -= x);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (nodes[a.0].value.values(), nodes[b.0].value.values());
                if let Some(ga) = buf!(*a) {
                    for ((o, gv), bv) in ga.iter_mut().zip(g).zip(vb) {
                        *o += gv * bv;
                    }
                }
                if let Some(gb) = buf!(*b) {
                    for ((o, gv), av) in gb.iter_mut().zip(g).zip(va) {
                        *o += gv * av;
                    }
                }
            }
            Op::AddRowBroadcast(x, b) => {
                if let Some(gx) = buf!(*x) {
                    gx.iter_mut().zip(g).for_each(|(o, v)| *o += v);
                }
                if let Some(gb) = buf!(*b) {
                    let m = gb.len();
                    for (i, v) in g.iter().enumerate() {
                        gb[i % m] += v;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = buf!(*x) {
                    gx.iter_mut().zip(g).for_each(|(o, v)| *o += c * v);
                }
            }
            Op::Tanh(x) => {
                if let Some(gx) = buf!(*x) {
                    for ((o, gv), yv) in gx.iter_mut().zip(g).zip(y) {
                        *o += gv * (1.0 - yv * yv);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = buf!(*x) {
                    for ((o, gv), yv) in gx.iter_mut().zip(g).zip(y) {
                        *o += gv * yv * (1.0 - yv);
                    }
                }
            }
            Op::Ln(x, eps) => {
                let xv = nodes[x.0].value.values();
                if let Some(gx) = buf!(*x) {
                    for ((o, gv), v) in gx.iter_mut().zip(g).zip(xv) {
                        *o += gv / (v + eps);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = buf!(*x) {
                    gx.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::Softmax { x, axis } => {
                let shape = node.value.shape();
                let (slices, len, stride) = softmax_slices(shape, *axis);
                if let Some(gx) = buf!(*x) {
                    for s in 0..slices {
                        let off = slice_offset(shape, *axis, s);
                        let inner: f64 = (0..len).map(|t| y[off + t * stride] * g[off + t * stride]).sum();
                        for t in 0..len {
                            let p = off + t * stride;
                            gx[p] += y[p] * (g[p] - inner);
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                if let Some(gx) = buf!(*x) {
                    // output is r×c, input is c×r
                    for i in 0..r {
                        for j in 0..c {
                            gx[j * r + i] += g[i * c + j];
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = nodes[p.0].value.len();
                    if let Some(gp) = buf!(p) {
                        gp.iter_mut().zip(&g[off..off + n]).for_each(|(o, v)| *o += v);
                    }
                    off += n;
                }
            }
            Op::ConcatCols(a, b) => {
                let r = node.value.shape()[0];
                let ca = nodes[a.0].value.shape()[1];
                let cb = nodes[b.0].value.shape()[1];
                if let Some(ga) = buf!(*a) {
                    for i in 0..r {
                        for j in 0..ca {
                            ga[i * ca + j] += g[i * (ca + cb) + j];
                        }
                    }
                }
                if let Some(gb) = buf!(*b) {
                    for i in 0..r {
                        for j in 0..cb {
                            gb[i * cb + j] += g[i * (ca + cb) + ca + j];
                        }
                    }
                }
            }
            Op::Slice { x, start } => {
                if let Some(gx) = buf!(*x) {
                    gx[*start..*start + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(o, v)| *o += v);
                }
            }
            Op::StackRows(rows) => {
                let w = node.value.shape()[1];
                for (r, &v) in rows.iter().enumerate() {
                    if let Some(gv) = buf!(v) {
                        gv.iter_mut().zip(&g[r * w..(r + 1) * w]).for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::VStack(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = nodes[p.0].value.len();
                    if let Some(gp) = buf!(p) {
                        gp.iter_mut().zip(&g[off..off + n]).for_each(|(o, v)| *o += v);
                    }
                    off += n;
                }
            }
            Op::GatherRows { src, rows } => {
                let c = node.value.shape()[1];
                if let Some(gs) = buf!(*src) {
                    for (r, idx) in rows.iter().enumerate() {
                        if let Some(i) = *idx {
                            gs[i * c..(i + 1) * c]
                                .iter_mut()
                                .zip(&g[r * c..(r + 1) * c])
                                .for_each(|(o, v)| *o += v);
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = buf!(*x) {
                    gx.iter_mut().zip(g).for_each(|(o, v)| *o += v);
                }
            }
            Op::Pick(x, i) => {
                if let Some(gx) = buf!(*x) {
                    gx[*i] += g[0];
                }
            }
            Op::RepeatEach(x, times) => {
                if let Some(gx) = buf!(*x) {
                    for (i, o) in gx.iter_mut().enumerate() {
                        *o += g[i * times..(i + 1) * times].iter().sum::<f64>();
                    }
                }
            }
            Op::MeanRows(x) => {
                let tx = &nodes[x.0].value;
                let (r, c) = (tx.shape()[0], tx.shape()[1]);
                if let Some(gx) = buf!(*x) {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j] / r as f64;
                        }
                    }
                }
            }
            Op::LstmCell { z, c_prev } => {
                let zv = nodes[z.0].value.values();
                let cp = nodes[c_prev.0].value.values();
                let h = cp.len();
                let mut dz = vec![0.0; 4 * h];
                let mut dcp = vec![0.0; h];
                for j in 0..h {
                    let i = sigmoid(zv[j]);
                    let f = sigmoid(zv[h + j]);
                    let gg = zv[2 * h + j].tanh();
                    let o = sigmoid(zv[3 * h + j]);
                    let c = y[h + j];
                    let tc = c.tanh();
                    let dh = g[j];
                    let dc = g[h + j] + dh * o * (1.0 - tc * tc);
                    dz[j] = dc * gg * i * (1.0 - i);
                    dz[h + j] = dc * cp[j] * f * (1.0 - f);
                    dz[2 * h + j] = dc * i * (1.0 - gg * gg);
                    dz[3 * h + j] = dh * tc * o * (1.0 - o);
                    dcp[j] = dc * f;
                }
                if let Some(gz) = buf!(*z) {
                    gz.iter_mut().zip(&dz).for_each(|(o, v)| *o += v);
                }
                if let Some(gc) = buf!(*c_prev) {
                    gc.iter_mut().zip(&dcp).for_each(|(o, v)| *o += v);
                }
            }
            Op::LstmSeq(saved) => self.lstm_seq_backward(saved, g, grads),
        }
    }

    fn lstm_seq_backward(&self, s: &LstmSeqSaved, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let tx = &nodes[s.x.0].value;
        let twx = &nodes[s.wx.0].value;
        let twh = &nodes[s.wh.0].value;
        let (steps, input) = (tx.shape()[0], tx.shape()[1]);
        let h = twh.shape()[1];
        let mut dwx = vec![0.0; 4 * h * input];
        let mut dwh = vec![0.0; 4 * h * h];
        let mut db = vec![0.0; 4 * h];
        let mut dx = vec![0.0; steps * input];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        for st in (0..steps).rev() {
            let t = if s.reverse { steps - 1 - st } else { st };
            let gs = &s.gates[st * 4 * h..(st + 1) * 4 * h];
            let cells = &s.cells[st * h..(st + 1) * h];
            let c_prev: Vec<f64> = if st == 0 {
                vec![0.0; h]
            } else {
                s.cells[(st - 1) * h..st * h].to_vec()
            };
            let h_prev: Vec<f64> = if st == 0 {
                vec![0.0; h]
            } else {
                // hidden state of the previous processed step
                (0..h)
                    .map(|j| s.gates[(st - 1) * 4 * h + 3 * h + j] * s.cells[(st - 1) * h + j].tanh())
                    .collect()
            };
            for j in 0..h {
                let (i, f, gg, o) = (gs[j], gs[h + j], gs[2 * h + j], gs[3 * h + j]);
                let tc = cells[j].tanh();
                let dh = g[t * h + j] + dh_next[j];
                let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
                dz[j] = dc * gg * i * (1.0 - i);
                dz[h + j] = dc * c_prev[j] * f * (1.0 - f);
                dz[2 * h + j] = dc * i * (1.0 - gg * gg);
                dz[3 * h + j] = dh * tc * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            let xt = tx.row(t);
            for (r, &dzr) in dz.iter().enumerate() {
                db[r] += dzr;
                if dzr == 0.0 {
                    continue;
                }
                for (o, xv) in dwx[r * input..(r + 1) * input].iter_mut().zip(xt) {
                    *o += dzr * xv;
                }
                for (o, hv) in dwh[r * h..(r + 1) * h].iter_mut().zip(&h_prev) {
                    *o += dzr * hv;
                }
            }
            let dxt = &mut dx[t * input..(t + 1) * input];
            for (r, &dzr) in dz.iter().enumerate() {
                for (o, w) in dxt.iter_mut().zip(&twx.values()[r * input..(r + 1) * input]) {
                    *o += dzr * w;
                }
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for (r, &dzr) in dz.iter().enumerate() {
                for (o, w) in dh_next.iter_mut().zip(&twh.values()[r * h..(r + 1) * h]) {
                    *o += dzr * w;
                }
            }
        }
        for (v, d) in [(s.x, dx), (s.wx, dwx), (s.wh, dwh), (s.b, db)] {
            if nodes[v.0].needs_grad {
                let n = d.len();
                let gv = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
                gv.iter_mut().zip(&d).for_each(|(o, x)| *o += x);
            }
        }
    }
}

/// Gradient buffer of `v`, allocated on first use, if `v` wants one.
fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let n = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matvec_raw(a: &[f64], m: usize, k: usize, x: &[f64]) -> Vec<f64> {
    (0..m).map(|i| dot(&a[i * k..(i + 1) * k], x)).collect()
}

fn softmax_values(x: &[f64], shape: &[usize], axis: usize, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let (slices, len, stride) = softmax_slices(shape, axis);
    let on = |p: usize| mask.is_none_or(|m| m[p]);
    let mut out = vec![0.0; x.len()];
    for s in 0..slices {
        let off = slice_offset(shape, axis, s);
        let idx = (0..len).map(|t| off + t * stride);
        let max = idx
            .clone()
            .filter(|&p| on(p))
            .map(|p| x[p])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(TensorError::AllMasked { slice: s });
        }
        let mut total = 0.0;
        for p in idx.clone().filter(|&p| on(p)) {
            let e = (x[p] - max).exp();
            out[p] = e;
            total += e;
        }
        for p in idx {
            out[p] /= total;
        }
    }
    Ok(out)
}
