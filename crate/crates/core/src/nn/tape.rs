//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its forward value; node ids are
//! assigned in order, so inputs always precede their consumers and a single
//! reverse sweep from the loss visits each node after all of its users.

use crate::error::{Error, Result};
use crate::nn::tensor::{matmul_nt_raw, matmul_raw, matmul_tn_raw, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    Scale(Var, f64),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        src: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    RepeatRows(Var),
    Reshape(Var),
    SumAll(Var),
    Mse(Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNT(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::AddRow(..) => "add_row",
            Op::Relu(_) => "relu",
            Op::Scale(..) => "scale",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::RepeatRows(_) => "repeat_rows",
            Op::Reshape(_) => "reshape",
            Op::SumAll(_) => "sum_all",
            Op::Mse(..) => "mse",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or `None` when `v` does not influence the loss.
    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Floating-point operation cost of one forward op, by the conventions used
/// throughout the crate (matmul = 2mkn, softmax = 4 per element, layer norm =
/// 7 per element, shape ops free).
pub mod cost {
    pub fn matmul(m: usize, k: usize, n: usize) -> u64 {
        2 * (m * k * n) as u64
    }
    pub fn elementwise(m: usize, n: usize) -> u64 {
        (m * n) as u64
    }
    pub fn softmax(m: usize, n: usize) -> u64 {
        4 * (m * n) as u64
    }
    pub fn layer_norm(m: usize, d: usize) -> u64 {
        7 * (m * d) as u64
    }
    pub fn mse(n: usize) -> u64 {
        3 * n as u64
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
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

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), value)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2();
        let (n, k2) = tb.dims2();
        if k != k2 {
            return Err(Error::shape(
                "matmul_nt",
                format!("{:?} x {:?}ᵀ", ta.shape(), tb.shape()),
            ));
        }
        let value = Tensor::matrix(m, n, matmul_nt_raw(ta.data(), tb.data(), m, k, n))?;
        self.push(Op::MatMulNT(a, b), value)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let mut value = self.value(a).clone();
        for (x, y) in value.data_mut().iter_mut().zip(self.value(b).data()) {
            *x -= y;
        }
        self.push(Op::Sub(a, b), value)
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (n, tb) = (self.value(a).cols(), self.value(bias));
        if tb.len() != n {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + row {:?}", self.value(a).shape(), tb.shape()),
            ));
        }
        let b = tb.data().to_vec();
        let mut value = self.value(a).clone();
        for row in value.data_mut().chunks_mut(n) {
            for (x, y) in row.iter_mut().zip(&b) {
                *x += y;
            }
        }
        self.push(Op::AddRow(a, bias), value)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(Op::Relu(a), value)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|v| v * c);
        self.push(Op::Scale(a, c), value)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let n = t.cols();
        let mut value = t.clone();
        for row in value.data_mut().chunks_mut(n) {
            softmax_in_place(row);
        }
        self.push(Op::SoftmaxRows(a), value)
    }

    /// Per-row normalization to zero mean and unit (1/d) variance followed by
    /// a learned affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let t = self.value(x);
        let (m, d) = t.dims2();
        if d < 2 {
            return Err(Error::shape("layer_norm", "row width must be at least 2"));
        }
        let (g, b) = (self.value(gain), self.value(bias));
        if g.len() != d || b.len() != d {
            return Err(Error::shape(
                "layer_norm",
                format!("width {d}, gain {:?}, bias {:?}", g.shape(), b.shape()),
            ));
        }
        let mut xhat = vec![0.0; m * d];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * d];
        for i in 0..m {
            let row = t.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = s;
            for j in 0..d {
                let h = (row[j] - mean) * s;
                xhat[i * d + j] = h;
                out[i * d + j] = h * g.data()[j] + b.data()[j];
            }
        }
        let value = Tensor::new(t.shape(), out)?;
        self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            value,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = match parts.first() {
            Some(&p) => self.value(p).rows(),
            None => return Err(Error::shape("concat_cols", "no inputs")),
        };
        if parts.iter().any(|&p| self.value(p).rows() != m) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::matrix(m, total, out)?;
        self.push(Op::ConcatCols(parts.to_vec()), value)
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(src);
        let (m, n) = t.dims2();
        if len == 0 || start + len > n {
            return Err(Error::shape(
                "slice_cols",
                format!("columns {start}..{} of {n}", start + len),
            ));
        }
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&t.row(i)[start..start + len]);
        }
        let value = Tensor::matrix(m, len, out)?;
        self.push(Op::SliceCols { src, start }, value)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = match parts.first() {
            Some(&p) => self.value(p).cols(),
            None => return Err(Error::shape("concat_rows", "no inputs")),
        };
        if parts.iter().any(|&p| self.value(p).cols() != n) {
            return Err(Error::shape("concat_rows", "column counts differ"));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let m = out.len() / n;
        let value = Tensor::matrix(m, n, out)?;
        self.push(Op::ConcatRows(parts.to_vec()), value)
    }

    /// Stacks `m` copies of a single-row tensor.
    pub fn repeat_rows(&mut self, a: Var, m: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rows() != 1 || m == 0 {
            return Err(Error::shape("repeat_rows", format!("{:?} x{m}", t.shape())));
        }
        let n = t.cols();
        let value = Tensor::matrix(m, n, t.data().repeat(m))?;
        self.push(Op::RepeatRows(a), value)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        self.push(Op::Reshape(a), value)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(Op::SumAll(a), value)
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let s: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let value = Tensor::scalar(s / ta.len() as f64);
        self.push(Op::Mse(a, b), value)
    }

    /// Forward FLOPs of everything recorded so far.
    pub fn flops(&self) -> u64 {
        self.nodes
            .iter()
            .map(|node| {
                let (m, n) = node.value.dims2();
                match &node.op {
                    Op::MatMul(a, _) => cost::matmul(m, self.value(*a).cols(), n),
                    Op::MatMulNT(a, _) => cost::matmul(m, self.value(*a).cols(), n),
                    Op::Add(..) | Op::Sub(..) | Op::AddRow(..) | Op::Relu(_) | Op::Scale(..) => {
                        cost::elementwise(m, n)
                    }
                    Op::SoftmaxRows(_) => cost::softmax(m, n),
                    Op::LayerNorm { .. } => cost::layer_norm(m, n),
                    Op::SumAll(a) => self.value(*a).len() as u64,
                    Op::Mse(a, _) => cost::mse(self.value(*a).len()),
                    Op::Leaf
                    | Op::ConcatCols(_)
                    | Op::SliceCols { .. }
                    | Op::ConcatRows(_)
                    | Op::RepeatRows(_)
                    | Op::Reshape(_) => 0,
                }
            })
            .sum()
    }

    /// Reverse sweep from a single-element `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape(), vec![1.0])?);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !g.is_finite() {
                return Err(Error::NonFinite { op: "backward" });
            }
            let node = &self.nodes[id];
            // Leaf gradients are kept for the caller; interior ones are consumed.
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            let mut acc = |v: Var, t: Tensor| accumulate(&mut grads, v, t);
            match &node.op {
                Op::Leaf => unreachable!(),
                &Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(a), self.value(b));
                    let (m, k) = ta.dims2();
                    let n = tb.cols();
                    let da = matmul_nt_raw(g.data(), tb.data(), m, n, k);
                    let db = matmul_tn_raw(ta.data(), g.data(), m, k, n);
                    acc(a, Tensor::new(ta.shape(), da)?);
                    acc(b, Tensor::new(tb.shape(), db)?);
                }
                &Op::MatMulNT(a, b) => {
                    // C = A Bᵀ: dA = dC B, dB = dCᵀ A
                    let (ta, tb) = (self.value(a), self.value(b));
                    let (m, k) = ta.dims2();
                    let n = tb.rows();
                    let da = matmul_raw(g.data(), tb.data(), m, n, k);
                    let db = matmul_tn_raw(g.data(), ta.data(), m, n, k);
                    acc(a, Tensor::new(ta.shape(), da)?);
                    acc(b, Tensor::new(tb.shape(), db)?);
                }
                &Op::Add(a, b) => {
                    acc(a, g.clone());
                    acc(b, g);
                }
                &Op::Sub(a, b) => {
                    acc(b, g.map(|v| -v));
                    acc(a, g);
                }
                &Op::AddRow(a, bias) => {
                    let tb = self.value(bias);
                    let mut db = vec![0.0; tb.len()];
                    for row in g.data().chunks(tb.len()) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    acc(bias, Tensor::new(tb.shape(), db)?);
                    acc(a, g);
                }
                &Op::Relu(a) => {
                    let mut d = g;
                    for (dv, &x) in d.data_mut().iter_mut().zip(self.value(a).data()) {
                        if x <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    acc(a, d);
                }
                &Op::Scale(a, c) => acc(a, g.map(|v| v * c)),
                &Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let n = y.cols();
                    let mut d = g;
                    for (drow, yrow) in d.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                        let dot: f64 = drow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for (dv, &yv) in drow.iter_mut().zip(yrow) {
                            *dv = yv * (*dv - dot);
                        }
                    }
                    acc(a, d);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let (m, d) = node.value.dims2();
                    let gv = self.value(*gain).data();
                    let mut dx = vec![0.0; m * d];
                    let mut dgain = vec![0.0; d];
                    let mut dbias = vec![0.0; d];
                    for i in 0..m {
                        let grow = &g.data()[i * d..(i + 1) * d];
                        let hrow = &xhat[i * d..(i + 1) * d];
                        let mut sum_gh = 0.0;
                        let mut sum_ghh = 0.0;
                        for j in 0..d {
                            dgain[j] += grow[j] * hrow[j];
                            dbias[j] += grow[j];
                            let gh = grow[j] * gv[j];
                            sum_gh += gh;
                            sum_ghh += gh * hrow[j];
                        }
                        let s = inv_std[i] / d as f64;
                        for j in 0..d {
                            let gh = grow[j] * gv[j];
                            dx[i * d + j] = s * (d as f64 * gh - sum_gh - hrow[j] * sum_ghh);
                        }
                    }
                    acc(*x, Tensor::new(node.value.shape(), dx)?);
                    acc(*gain, Tensor::new(self.value(*gain).shape(), dgain)?);
                    acc(*bias, Tensor::new(self.value(*bias).shape(), dbias)?);
                }
                Op::ConcatCols(parts) => {
                    let (m, total) = g.dims2();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut d = Vec::with_capacity(m * w);
                        for i in 0..m {
                            d.extend_from_slice(&g.data()[i * total + offset..i * total + offset + w]);
                        }
                        offset += w;
                        acc(p, Tensor::new(self.value(p).shape(), d)?);
                    }
                }
                &Op::SliceCols { src, start } => {
                    let ts = self.value(src);
                    let (m, n) = ts.dims2();
                    let w = g.cols();
                    let mut d = vec![0.0; m * n];
                    for i in 0..m {
                        d[i * n + start..i * n + start + w].copy_from_slice(g.row(i));
                    }
                    acc(src, Tensor::new(ts.shape(), d)?);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        let d = g.data()[offset..offset + len].to_vec();
                        offset += len;
                        acc(p, Tensor::new(self.value(p).shape(), d)?);
                    }
                }
                &Op::RepeatRows(a) => {
                    let ta = self.value(a);
                    let n = ta.len();
                    let mut d = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (dv, v) in d.iter_mut().zip(row) {
                            *dv += v;
                        }
                    }
                    acc(a, Tensor::new(ta.shape(), d)?);
                }
                &Op::Reshape(a) => {
                    acc(a, g.reshape(self.value(a).shape())?);
                }
                &Op::SumAll(a) => {
                    let s = g.data()[0];
                    acc(a, Tensor::filled(self.value(a).shape(), s));
                }
                &Op::Mse(a, b) => {
                    let (ta, tb) = (self.value(a), self.value(b));
                    let c = 2.0 * g.data()[0] / ta.len() as f64;
                    let da: Vec<f64> = ta
                        .data()
                        .iter()
                        .zip(tb.data())
                        .map(|(x, y)| c * (x - y))
                        .collect();
                    let da = Tensor::new(ta.shape(), da)?;
                    acc(b, da.map(|v| -v));
                    acc(a, da);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
