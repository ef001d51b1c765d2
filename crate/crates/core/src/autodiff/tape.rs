use super::kernels::{self, ConvGeometry};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise operation kinds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Neg,
    Exp,
    Log,
    Relu,
    Sigmoid,
    Sign,
    Clamp(f32, f32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Unary(Var, Unary),
    Binary(Var, Var, Binary),
    Affine(Var, f32),
    MatMul(Var, Var),
    Conv2d { x: Var, k: Var, geom: ConvGeometry, col: Vec<f32> },
    BiasChannels(Var, Var),
    BiasRows(Var, Var),
    Reshape(Var),
    Transpose(Var),
    SliceCols(Var, usize, usize),
    Shift2d(Var, isize, isize),
    Reduce { x: Var, kind: Reduce, axis: Option<usize>, argmax: Vec<usize> },
    SoftmaxRows(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, weights: Vec<f32>, probs: Vec<f32> },
    GatherCols(Var, Vec<usize>),
    Cosine { u: Var, v: Var, active: bool, norm_u: f32, norm_v: f32, dot: f32 },
    LogSumExp(Var),
    Contrastive { partners: Var, target: Var, scale: f32, softmax: Vec<f32> },
    Stack(Vec<Var>),
    SmoothL1 { pred: Var, target: Vec<f32>, mask: Vec<bool>, count: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Guard used by [`Tape::cosine_similarity`]: norms below this value make the
/// similarity 0 with zero gradient.
pub const COSINE_EPS: f32 = 1e-8;

/// Linear record of operations for one reverse-mode differentiation pass.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it
/// and `backward` is a single reverse sweep. A tape is single-threaded; build a
/// fresh one per forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to the grad-enabled leaves of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of `var`, or `None` if `var` is not a grad-enabled leaf.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Moves the gradient of `var` out.
    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn broadcast_shape(a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() {
        Ok(a.shape().to_vec())
    } else if a.numel() == 1 {
        Ok(b.shape().to_vec())
    } else if b.numel() == 1 {
        Ok(a.shape().to_vec())
    } else {
        Err(Error::shape(format!("elementwise {:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn unary_forward(kind: Unary, x: f32) -> f32 {
    match kind {
        Unary::Neg => -x,
        Unary::Exp => x.exp(),
        Unary::Log => x.ln(),
        Unary::Relu => x.max(0.0),
        Unary::Sigmoid => {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        }
        Unary::Sign => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        Unary::Clamp(lo, hi) => x.clamp(lo, hi),
    }
}

/// d(out)/d(in) given the input `x` and output `y`.
fn unary_derivative(kind: Unary, x: f32, y: f32) -> f32 {
    match kind {
        Unary::Neg => -1.0,
        Unary::Exp => y,
        Unary::Log => 1.0 / x,
        Unary::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Sign => 0.0,
        Unary::Clamp(lo, hi) => {
            if x > lo && x < hi {
                1.0
            } else {
                0.0
            }
        }
    }
}

fn reduce_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a leaf. It participates in `backward` iff `t.grad_enabled()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.grad_enabled();
        self.push(t, Op::Leaf, rg)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.without_grad(), Op::Leaf, false)
    }

    /// Records a grad-enabled leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t.with_grad(), Op::Leaf, true)
    }

    pub fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let xv = self.value(x);
        match kind {
            Unary::Log => {
                if let Some(bad) = xv.data().iter().find(|v| **v <= 0.0) {
                    return Err(Error::domain(format!("log of non-positive value {bad}")));
                }
            }
            Unary::Clamp(lo, hi) if lo > hi => {
                return Err(Error::domain(format!("clamp bounds inverted: [{lo}, {hi}]")));
            }
            _ => {}
        }
        let out = xv.map(|v| unary_forward(kind, v));
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Unary(x, kind), rg))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Neg, x)
    }
    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }
    pub fn sign(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sign, x)
    }
    pub fn clamp(&mut self, x: Var, lo: f32, hi: f32) -> Result<Var> {
        self.unary(Unary::Clamp(lo, hi), x)
    }

    /// Binary elementwise op. Operands must share a shape, or one must hold
    /// a single element (scalar broadcast).
    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let shape = broadcast_shape(av, bv)?;
        if kind == Binary::Div && bv.data().iter().any(|v| *v == 0.0) {
            return Err(Error::domain("division by zero"));
        }
        let n: usize = shape.iter().product();
        let (ad, bd) = (av.data(), bv.data());
        let pick = |d: &[f32], i: usize| if d.len() == 1 { d[0] } else { d[i] };
        let data: Vec<f32> = (0..n)
            .map(|i| {
                let (x, y) = (pick(ad, i), pick(bd, i));
                match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                    Binary::Div => x / y,
                }
            })
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Binary(a, b, kind), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    /// `x * factor`.
    pub fn scale(&mut self, x: Var, factor: f32) -> Result<Var> {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Affine(x, factor), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let [m, k] = self.value(a).dims2()?;
        let [k2, n] = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::shape(format!("matmul inner dims {k} vs {k2}")));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    /// 2-D cross-correlation of a C_in×H×W input with a C_out×C_in×kH×kW kernel.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let [c_in, h, w] = self.value(x).dims3()?;
        let (c_out, kc, kh, kw) = match self.value(k).shape()[..] {
            [a, b, c, d] => (a, b, c, d),
            ref s => return Err(Error::shape(format!("conv kernel must be 4-D, got {s:?}"))),
        };
        if kc != c_in {
            return Err(Error::shape(format!("conv kernel expects {kc} channels, input has {c_in}")));
        }
        if stride == 0 {
            return Err(Error::shape("conv stride must be positive"));
        }
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        if kh > ph || kw > pw {
            return Err(Error::shape(format!("kernel {kh}x{kw} exceeds padded input {ph}x{pw}")));
        }
        if (ph - kh) % stride != 0 || (pw - kw) % stride != 0 {
            return Err(Error::shape(format!(
                "non-integral conv output size: ({ph}-{kh})/{stride}, ({pw}-{kw})/{stride}"
            )));
        }
        let geom = ConvGeometry {
            c_in,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            h_out: (ph - kh) / stride + 1,
            w_out: (pw - kw) / stride + 1,
        };
        let col = kernels::im2col(self.value(x).data(), &geom);
        let (rows, cols) = (geom.col_rows(), geom.col_cols());
        let mut out = vec![0.0; c_out * cols];
        kernels::gemm(c_out, rows, cols, self.value(k).data(), false, &col, false, &mut out, false);
        let rg = self.rg(&[x, k]);
        let value = Tensor::from_parts(vec![c_out, geom.h_out, geom.w_out], out);
        // The patch matrix is only needed to form the kernel gradient.
        let col = if self.nodes[k.0].requires_grad { col } else { Vec::new() };
        Ok(self.push(value, Op::Conv2d { x, k, geom, col }, rg))
    }

    /// Adds a per-channel bias `b` (length C) to a C×H×W tensor.
    pub fn bias_channels(&mut self, x: Var, b: Var) -> Result<Var> {
        let [c, h, w] = self.value(x).dims3()?;
        if self.value(b).shape() != [c] {
            return Err(Error::shape(format!("channel bias {:?} for {c} channels", self.value(b).shape())));
        }
        let bd = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for (ci, chunk) in out.chunks_mut(h * w).enumerate() {
            chunk.iter_mut().for_each(|v| *v += bd[ci]);
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(Tensor::from_parts(vec![c, h, w], out), Op::BiasChannels(x, b), rg))
    }

    /// Adds a row-vector bias `b` (length N) to every row of an M×N tensor.
    pub fn bias_rows(&mut self, x: Var, b: Var) -> Result<Var> {
        let [m, n] = self.value(x).dims2()?;
        if self.value(b).shape() != [n] {
            return Err(Error::shape(format!("row bias {:?} for {n} columns", self.value(b).shape())));
        }
        let bd = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n) {
            row.iter_mut().zip(bd).for_each(|(v, b)| *v += b);
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::BiasRows(x, b), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshaped(shape)?.without_grad();
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let [m, n] = self.value(x).dims2()?;
        let d = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::Transpose(x), rg))
    }

    /// Columns `start..end` of an M×N tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let [m, n] = self.value(x).dims2()?;
        if start >= end || end > n {
            return Err(Error::shape(format!("column range {start}..{end} of {n}")));
        }
        let d = self.value(x).data();
        let out: Vec<f32> = (0..m).flat_map(|i| d[i * n + start..i * n + end].iter().copied()).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(vec![m, end - start], out), Op::SliceCols(x, start, end), rg))
    }

    /// Translates a C×H×W tensor by (dr, dc) cells with zero fill.
    pub fn shift2d(&mut self, x: Var, dr: isize, dc: isize) -> Result<Var> {
        let out = shift_chw(self.value(x), dr, dc)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Shift2d(x, dr, dc), rg))
    }

    /// Sum, mean or max over all elements (`axis = None`) or along one axis.
    pub fn reduce(&mut self, kind: Reduce, x: Var, axis: Option<usize>) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let d = xv.data();
        let (outer, n, inner, out_shape) = match axis {
            None => (1, d.len(), 1, vec![1]),
            Some(ax) => {
                if ax >= shape.len() {
                    return Err(Error::shape(format!("axis {ax} out of range for {shape:?}")));
                }
                let (o, n, i) = reduce_layout(&shape, ax);
                let mut s: Vec<usize> = shape.iter().enumerate().filter(|(j, _)| *j != ax).map(|(_, v)| *v).collect();
                if s.is_empty() {
                    s.push(1);
                }
                (o, n, i, s)
            }
        };
        if n == 0 {
            return Err(Error::shape("reduction over empty tensor"));
        }
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        if kind == Reduce::Max {
            argmax = vec![0; outer * inner];
        }
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| d[(o * n + j) * inner + i];
                let slot = o * inner + i;
                match kind {
                    Reduce::Sum | Reduce::Mean => {
                        let s: f64 = (0..n).map(|j| at(j) as f64).sum();
                        out[slot] = (if kind == Reduce::Mean { s / n as f64 } else { s }) as f32;
                    }
                    Reduce::Max => {
                        let mut best = 0;
                        for j in 1..n {
                            if at(j) > at(best) {
                                best = j;
                            }
                        }
                        out[slot] = at(best);
                        argmax[slot] = best;
                    }
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::Reduce { x, kind, axis, argmax }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(Reduce::Sum, x, None)
    }
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(Reduce::Mean, x, None)
    }
    pub fn max(&mut self, x: Var) -> Result<Var> {
        self.reduce(Reduce::Max, x, None)
    }

    /// Row-wise softmax of an N×C tensor, max-subtracted.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let [m, n] = self.value(x).dims2()?;
        let out = softmax_rows(self.value(x).data(), m, n);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::SoftmaxRows(x), rg))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let n = labels.len();
        self.weighted_cross_entropy(logits, labels, &vec![1.0; n])
    }

    /// Cross-entropy with per-row weights: `Σ wᵢ·CEᵢ / Σ wᵢ`.
    pub fn weighted_cross_entropy(&mut self, logits: Var, labels: &[usize], weights: &[f32]) -> Result<Var> {
        let [m, n] = self.value(logits).dims2()?;
        if labels.len() != m || weights.len() != m {
            return Err(Error::shape(format!("{m} logit rows, {} labels, {} weights", labels.len(), weights.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::domain(format!("label {bad} out of range for {n} classes")));
        }
        let wsum: f32 = weights.iter().sum();
        if wsum <= 0.0 || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::domain("cross-entropy weights must be non-negative with positive sum"));
        }
        let d = self.value(logits).data();
        let mut probs = vec![0.0; m * n];
        let mut loss = 0.0f64;
        for i in 0..m {
            let row = &d[i * n..(i + 1) * n];
            let mx = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f32>().ln();
            for j in 0..n {
                probs[i * n + j] = (row[j] - lse).exp();
            }
            loss += (weights[i] * (lse - row[labels[i]])) as f64;
        }
        let value = Tensor::scalar((loss / wsum as f64) as f32);
        let rg = self.rg(&[logits]);
        let op = Op::CrossEntropy { logits, labels: labels.to_vec(), weights: weights.to_vec(), probs };
        Ok(self.push(value, op, rg))
    }

    /// Picks `x[i, idx[i]]` from an N×C tensor, giving a length-N vector.
    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let [m, n] = self.value(x).dims2()?;
        if idx.len() != m || idx.iter().any(|&j| j >= n) {
            return Err(Error::shape(format!("gather of {} indices from {m}x{n}", idx.len())));
        }
        let d = self.value(x).data();
        let out: Vec<f32> = idx.iter().enumerate().map(|(i, &j)| d[i * n + j]).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(vec![m], out), Op::GatherCols(x, idx.to_vec()), rg))
    }

    /// `uᵀv / (‖u‖·‖v‖ + ε)`, or 0 with zero gradient when either norm is
    /// below [`COSINE_EPS`].
    pub fn cosine_similarity(&mut self, u: Var, v: Var) -> Result<Var> {
        let (uv, vv) = (self.value(u), self.value(v));
        if uv.numel() != vv.numel() {
            return Err(Error::shape(format!("cosine of lengths {} and {}", uv.numel(), vv.numel())));
        }
        let (mut dot, mut uu, mut vv2) = (0.0f64, 0.0f64, 0.0f64);
        for (&a, &b) in uv.data().iter().zip(vv.data()) {
            let (a, b) = (a as f64, b as f64);
            dot += a * b;
            uu += a * a;
            vv2 += b * b;
        }
        let (nu, nv) = (uu.sqrt(), vv2.sqrt());
        let active = nu >= COSINE_EPS as f64 && nv >= COSINE_EPS as f64;
        let s = if active { (dot / (nu * nv + COSINE_EPS as f64)) as f32 } else { 0.0 };
        let (dot, norm_u, norm_v) = (dot as f32, nu as f32, nv as f32);
        let rg = self.rg(&[u, v]);
        Ok(self.push(Tensor::scalar(s), Op::Cosine { u, v, active, norm_u, norm_v, dot }, rg))
    }

    /// `log Σ exp(x)` over all elements, max-shifted.
    pub fn logsumexp(&mut self, x: Var) -> Result<Var> {
        let d = self.value(x).data();
        let mx = d.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let s = (mx as f64 + d.iter().map(|&v| ((v - mx) as f64).exp()).sum::<f64>().ln()) as f32;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::LogSumExp(x), rg))
    }

    /// `log Σ_o exp(a·p_o) − a·s` for a vector `partners` and a scalar
    /// `target`, evaluated in f64 so large scales `a` lose no precision to
    /// intermediate rounding.
    pub fn contrastive_term(&mut self, partners: Var, target: Var, scale: f32) -> Result<Var> {
        if self.value(target).numel() != 1 {
            return Err(Error::shape(format!("contrastive target of shape {:?}", self.value(target).shape())));
        }
        let p = self.value(partners).data();
        if p.is_empty() {
            return Err(Error::shape("contrastive term without partners"));
        }
        let a = scale as f64;
        let logits: Vec<f64> = p.iter().map(|&v| a * v as f64).collect();
        let mx = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let exps: Vec<f64> = logits.iter().map(|&l| (l - mx).exp()).collect();
        let z: f64 = exps.iter().sum();
        let value = mx + z.ln() - a * self.value(target).item() as f64;
        let softmax = exps.iter().map(|e| (e / z) as f32).collect();
        let rg = self.rg(&[partners, target]);
        Ok(self.push(Tensor::scalar(value as f32), Op::Contrastive { partners, target, scale, softmax }, rg))
    }

    /// Stacks equally shaped values along a new leading axis. Single-element
    /// inputs stack into a flat vector.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::shape("stack of nothing"))?;
        let shape = self.value(*first).shape().to_vec();
        let mut data = Vec::with_capacity(xs.len() * self.value(*first).numel());
        for &x in xs {
            if self.value(x).shape() != shape.as_slice() {
                return Err(Error::shape(format!("stack {:?} vs {shape:?}", self.value(x).shape())));
            }
            data.extend_from_slice(self.value(x).data());
        }
        let out_shape = if shape.iter().product::<usize>() == 1 {
            vec![xs.len()]
        } else {
            std::iter::once(xs.len()).chain(shape.iter().copied()).collect()
        };
        let rg = self.rg(xs);
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::Stack(xs.to_vec()), rg))
    }

    /// Mean Huber (β = 1) loss over the rows selected by `mask`, summed across
    /// columns. Returns 0 when no row is selected.
    pub fn smooth_l1(&mut self, pred: Var, target: &Tensor, mask: &[bool]) -> Result<Var> {
        let [m, n] = self.value(pred).dims2()?;
        if target.shape() != [m, n] || mask.len() != m {
            return Err(Error::shape(format!("smooth-L1 target {:?} / mask {} for {m}x{n}", target.shape(), mask.len())));
        }
        let count = mask.iter().filter(|b| **b).count();
        let p = self.value(pred).data();
        let mut total = 0.0f32;
        for i in (0..m).filter(|&i| mask[i]) {
            for j in 0..n {
                let d = p[i * n + j] - target.data()[i * n + j];
                total += if d.abs() < 1.0 { 0.5 * d * d } else { d.abs() - 0.5 };
            }
        }
        let value = if count == 0 { 0.0 } else { total / count as f32 };
        let rg = self.rg(&[pred]);
        let op = Op::SmoothL1 { pred, target: target.data().to_vec(), mask: mask.to_vec(), count };
        Ok(self.push(Tensor::scalar(value), op, rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::shape(format!("backward needs a scalar loss, got {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, node.requires_grad, g) {
                (Op::Leaf, true, Some(g)) => Some(Tensor::from_parts(node.value.shape().to_vec(), g)),
                (Op::Leaf, true, None) => Some(Tensor::zeros(node.value.shape())),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f32>>], var: Var, f: impl FnOnce(&mut [f32])) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        let slot = grads[var.0].get_or_insert_with(|| vec![0.0; self.nodes[var.0].value.numel()]);
        f(slot);
    }

    fn propagate(&self, node: &Node, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Unary(x, kind) => {
                let xd = self.value(*x).data();
                let yd = node.value.data();
                self.accumulate(grads, *x, |dx| {
                    for i in 0..dx.len() {
                        dx[i] += g[i] * unary_derivative(*kind, xd[i], yd[i]);
                    }
                });
            }
            Op::Binary(a, b, kind) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let pick = |d: &[f32], i: usize| if d.len() == 1 { d[0] } else { d[i] };
                let n = g.len();
                let partial = |wrt_a: bool, i: usize| -> f32 {
                    let (x, y) = (pick(ad, i), pick(bd, i));
                    match (kind, wrt_a) {
                        (Binary::Add, _) => 1.0,
                        (Binary::Sub, true) => 1.0,
                        (Binary::Sub, false) => -1.0,
                        (Binary::Mul, true) => y,
                        (Binary::Mul, false) => x,
                        (Binary::Div, true) => 1.0 / y,
                        (Binary::Div, false) => -x / (y * y),
                    }
                };
                for (var, wrt_a) in [(*a, true), (*b, false)] {
                    self.accumulate(grads, var, |dv| {
                        if dv.len() == 1 && n > 1 {
                            dv[0] += (0..n).map(|i| g[i] * partial(wrt_a, i)).sum::<f32>();
                        } else {
                            for i in 0..n {
                                dv[i] += g[i] * partial(wrt_a, i);
                            }
                        }
                    });
                }
            }
            Op::Affine(x, factor) => {
                self.accumulate(grads, *x, |dx| dx.iter_mut().zip(g).for_each(|(d, g)| *d += g * factor));
            }
            Op::MatMul(a, b) => {
                let [m, k] = self.value(*a).dims2().expect("recorded shape");
                let n = node.value.shape()[1];
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                // dA = G·Bᵀ, dB = Aᵀ·G
                self.accumulate(grads, *a, |da| kernels::gemm(m, n, k, g, false, bd, true, da, true));
                self.accumulate(grads, *b, |db| kernels::gemm(k, m, n, ad, true, g, false, db, true));
            }
            Op::Conv2d { x, k, geom, col } => {
                let c_out = node.value.shape()[0];
                let (rows, cols) = (geom.col_rows(), geom.col_cols());
                self.accumulate(grads, *k, |dk| kernels::gemm(c_out, cols, rows, g, false, col, true, dk, true));
                if self.nodes[x.0].requires_grad {
                    let mut dcol = vec![0.0; rows * cols];
                    let kd = self.value(*k).data();
                    kernels::gemm(rows, c_out, cols, kd, true, g, false, &mut dcol, false);
                    self.accumulate(grads, *x, |dx| kernels::col2im(&dcol, geom, dx));
                }
            }
            Op::BiasChannels(x, b) => {
                self.accumulate(grads, *x, |dx| dx.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                let c = self.value(*b).numel();
                let hw = g.len() / c;
                self.accumulate(grads, *b, |db| {
                    for (ci, chunk) in g.chunks(hw).enumerate() {
                        db[ci] += chunk.iter().sum::<f32>();
                    }
                });
            }
            Op::BiasRows(x, b) => {
                self.accumulate(grads, *x, |dx| dx.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                let n = self.value(*b).numel();
                self.accumulate(grads, *b, |db| {
                    for row in g.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, |dx| dx.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            Op::Transpose(x) => {
                let [m, n] = self.value(*x).dims2().expect("recorded shape");
                self.accumulate(grads, *x, |dx| {
                    for i in 0..m {
                        for j in 0..n {
                            dx[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::SliceCols(x, start, end) => {
                let [m, n] = self.value(*x).dims2().expect("recorded shape");
                let w = end - start;
                self.accumulate(grads, *x, |dx| {
                    for i in 0..m {
                        for j in 0..w {
                            dx[i * n + start + j] += g[i * w + j];
                        }
                    }
                });
            }
            Op::Shift2d(x, dr, dc) => {
                let shape = node.value.shape().to_vec();
                let gt = Tensor::from_parts(shape, g.to_vec());
                let back = shift_chw(&gt, -dr, -dc).expect("recorded shape");
                self.accumulate(grads, *x, |dx| dx.iter_mut().zip(back.data()).for_each(|(d, g)| *d += g));
            }
            Op::Reduce { x, kind, axis, argmax } => {
                let shape = self.value(*x).shape().to_vec();
                let (outer, n, inner) = match axis {
                    None => (1, self.value(*x).numel(), 1),
                    Some(ax) => reduce_layout(&shape, *ax),
                };
                self.accumulate(grads, *x, |dx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let gs = g[o * inner + i];
                            match kind {
                                Reduce::Sum => (0..n).for_each(|j| dx[(o * n + j) * inner + i] += gs),
                                Reduce::Mean => (0..n).for_each(|j| dx[(o * n + j) * inner + i] += gs / n as f32),
                                Reduce::Max => dx[(o * n + argmax[o * inner + i]) * inner + i] += gs,
                            }
                        }
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let [m, n] = node.value.dims2().expect("recorded shape");
                let y = node.value.data();
                self.accumulate(grads, *x, |dx| {
                    for i in 0..m {
                        let r = i * n..(i + 1) * n;
                        let dot: f32 = y[r.clone()].iter().zip(&g[r.clone()]).map(|(a, b)| a * b).sum();
                        for j in r {
                            dx[j] += y[j] * (g[j] - dot);
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, labels, weights, probs } => {
                let n = probs.len() / labels.len();
                let wsum: f32 = weights.iter().sum();
                self.accumulate(grads, *logits, |dx| {
                    for (i, (&l, &w)) in labels.iter().zip(weights).enumerate() {
                        let s = g[0] * w / wsum;
                        for j in 0..n {
                            let onehot = if j == l { 1.0 } else { 0.0 };
                            dx[i * n + j] += s * (probs[i * n + j] - onehot);
                        }
                    }
                });
            }
            Op::GatherCols(x, idx) => {
                let n = self.value(*x).shape()[1];
                self.accumulate(grads, *x, |dx| {
                    for (i, &j) in idx.iter().enumerate() {
                        dx[i * n + j] += g[i];
                    }
                });
            }
            Op::Cosine { u, v, active, norm_u, norm_v, dot } => {
                if !active {
                    return;
                }
                let denom = norm_u * norm_v + COSINE_EPS;
                let (ud, vd) = (self.value(*u).data(), self.value(*v).data());
                // ∂s/∂u = v/D − (uᵀv/D²)·‖v‖·u/‖u‖
                let coef_u = dot / (denom * denom) * norm_v / norm_u;
                let coef_v = dot / (denom * denom) * norm_u / norm_v;
                self.accumulate(grads, *u, |du| {
                    for i in 0..du.len() {
                        du[i] += g[0] * (vd[i] / denom - coef_u * ud[i]);
                    }
                });
                self.accumulate(grads, *v, |dv| {
                    for i in 0..dv.len() {
                        dv[i] += g[0] * (ud[i] / denom - coef_v * vd[i]);
                    }
                });
            }
            Op::LogSumExp(x) => {
                let s = node.value.item();
                let xd = self.value(*x).data();
                self.accumulate(grads, *x, |dx| {
                    for i in 0..dx.len() {
                        dx[i] += g[0] * (xd[i] - s).exp();
                    }
                });
            }
            Op::Contrastive { partners, target, scale, softmax } => {
                let a = g[0] * scale;
                self.accumulate(grads, *partners, |dx| dx.iter_mut().zip(softmax).for_each(|(d, p)| *d += a * p));
                self.accumulate(grads, *target, |dx| dx[0] -= a);
            }
            Op::Stack(xs) => {
                let chunk = self.value(xs[0]).numel();
                for (i, &x) in xs.iter().enumerate() {
                    self.accumulate(grads, x, |dx| {
                        dx.iter_mut().zip(&g[i * chunk..(i + 1) * chunk]).for_each(|(d, g)| *d += g)
                    });
                }
            }
            Op::SmoothL1 { pred, target, mask, count } => {
                if *count == 0 {
                    return;
                }
                let n = target.len() / mask.len();
                let p = self.value(*pred).data();
                let scale = g[0] / *count as f32;
                self.accumulate(grads, *pred, |dp| {
                    for i in (0..mask.len()).filter(|&i| mask[i]) {
                        for j in 0..n {
                            let d = p[i * n + j] - target[i * n + j];
                            dp[i * n + j] += scale * if d.abs() < 1.0 { d } else { d.signum() };
                        }
                    }
                });
            }
        }
    }
}

pub(crate) fn softmax_rows(d: &[f32], m: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &d[i * n..(i + 1) * n];
        let mx = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let mut z = 0.0;
        for j in 0..n {
            let e = (row[j] - mx).exp();
            out[i * n + j] = e;
            z += e;
        }
        out[i * n..(i + 1) * n].iter_mut().for_each(|v| *v /= z);
    }
    out
}

/// Shifts a C×H×W tensor so that cell (r, c) moves to (r + dr, c + dc);
/// vacated cells are zero.
pub(crate) fn shift_chw(x: &Tensor, dr: isize, dc: isize) -> Result<Tensor> {
    let [c, h, w] = x.dims3()?;
    let src = x.data();
    let mut out = vec![0.0f32; c * h * w];
    for ch in 0..c {
        for r in 0..h as isize {
            let sr = r - dr;
            if sr < 0 || sr >= h as isize {
                continue;
            }
            for col in 0..w as isize {
                let sc = col - dc;
                if sc >= 0 && sc < w as isize {
                    out[(ch * h + r as usize) * w + col as usize] = src[(ch * h + sr as usize) * w + sc as usize];
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, h, w], out))
}
