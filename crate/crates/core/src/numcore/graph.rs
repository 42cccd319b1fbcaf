//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients for
//! every node that depends on a parameter leaf.
//!
//! None of the operations has a kink (GELU uses the smooth tanh form and there
//! is no max/ReLU), so no subgradient convention is needed. The max-shift
//! inside softmax is a numerical device whose derivative cancels exactly.

use super::error::TensorError;
use super::kernels::{self, softmax_in_place};
use super::tensor::Tensor;
use crate::par::Exec;

/// Handle to a node on a [`Graph`].
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
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Reshape(Var),
    Transpose(Var),
    GatherRows(Var, Vec<usize>),
    ScatterRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    /// Output holds the normalised rows; `inv_std` is one entry per row.
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Softmax(Var),
    Gelu(Var),
    /// `probs` holds the `heads × n_q × n_k` attention weights.
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording tape for one forward/backward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that needs one.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x)
}

/// Columns `[h*dh, (h+1)*dh)` of an `n × d` matrix as a contiguous `n × dh`.
fn head_cols(x: &[f64], n: usize, d: usize, h: usize, dh: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * dh);
    for i in 0..n {
        out.extend_from_slice(&x[i * d + h * dh..i * d + (h + 1) * dh]);
    }
    out
}

fn add_head_cols(dst: &mut [f64], src: &[f64], n: usize, d: usize, h: usize, dh: usize) {
    for i in 0..n {
        for (o, s) in dst[i * d + h * dh..i * d + (h + 1) * dh]
            .iter_mut()
            .zip(&src[i * dh..(i + 1) * dh])
        {
            *o += s;
        }
    }
}

fn last_dim(t: &Tensor) -> usize {
    *t.shape().last().unwrap()
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, TensorError> {
        let value = value.check_finite(name)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    /// A leaf that gradients are computed for.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(TensorError::shape("matmul", format!("{m}x{k} · {k2}x{n}")));
        }
        let out = kernels::matmul(Exec::default(), self.value(a).data(), self.value(b).data(), m, k, n);
        self.push_op("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push_op("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push_op("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push_op("mul", out, Op::Mul(a, b), &[a, b])
    }

    fn row_operand(&self, op: &'static str, x: Var, r: Var) -> Result<(usize, usize), TensorError> {
        let (m, n) = self.value(x).dims2(op)?;
        if self.value(r).numel() != n || self.value(r).shape().iter().rev().skip(1).any(|&e| e != 1) {
            return Err(TensorError::shape(
                op,
                format!("row operand {:?} does not broadcast over {m}x{n}", self.shape(r)),
            ));
        }
        Ok((m, n))
    }

    /// Adds a length-`n` vector to every row of an `m × n` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, TensorError> {
        let (_, n) = self.row_operand("add_row", x, row)?;
        let r = self.value(row).data().to_vec();
        let mut out = self.value(x).clone();
        out.data_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v += r[i % n]);
        self.push_op("add_row", out, Op::AddRow(x, row), &[x, row])
    }

    /// Multiplies every row of an `m × n` matrix elementwise by a length-`n` vector.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var, TensorError> {
        let (_, n) = self.row_operand("mul_row", x, row)?;
        let r = self.value(row).data().to_vec();
        let mut out = self.value(x).clone();
        out.data_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v *= r[i % n]);
        self.push_op("mul_row", out, Op::MulRow(x, row), &[x, row])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        let out = self.value(x).map(|v| v * c);
        self.push_op("scale", out, Op::Scale(x, c), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var, TensorError> {
        let out = self.value(x).reshape(shape)?;
        self.push_op("reshape", out, Op::Reshape(x), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.value(x).transpose()?;
        self.push_op("transpose", out, Op::Transpose(x), &[x])
    }

    /// `out[i] = x[idx[i]]` over rows of a matrix.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let (m, n) = self.value(x).dims2("gather_rows")?;
        if idx.is_empty() {
            return Err(TensorError::invalid("gather_rows", "empty index list"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(TensorError::invalid("gather_rows", format!("row {bad} out of {m}")));
        }
        let src = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(src.row(i));
        }
        let t = Tensor::from_parts(vec![idx.len(), n], out);
        self.push_op("gather_rows", t, Op::GatherRows(x, idx.to_vec()), &[x])
    }

    /// Places row `i` of `x` at row `idx[i]` of an `rows × n` zero matrix.
    /// Indices must be distinct.
    pub fn scatter_rows(&mut self, x: Var, idx: &[usize], rows: usize) -> Result<Var, TensorError> {
        let (m, n) = self.value(x).dims2("scatter_rows")?;
        if idx.len() != m {
            return Err(TensorError::shape(
                "scatter_rows",
                format!("{} indices for {m} rows", idx.len()),
            ));
        }
        let mut seen = vec![false; rows];
        for &i in idx {
            if i >= rows || seen[i] {
                return Err(TensorError::invalid(
                    "scatter_rows",
                    format!("index {i} out of range or repeated"),
                ));
            }
            seen[i] = true;
        }
        let src = self.value(x);
        let mut out = vec![0.0; rows * n];
        for (r, &i) in idx.iter().enumerate() {
            out[i * n..(i + 1) * n].copy_from_slice(src.row(r));
        }
        let t = Tensor::from_parts(vec![rows, n], out);
        self.push_op("scatter_rows", t, Op::ScatterRows(x, idx.to_vec()), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.value(x).sum();
        self.push_op("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = self.value(x);
        let s = t.sum() / t.numel() as f64;
        self.push_op("mean", Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Column means of an `m × n` matrix, as `1 × n`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let (m, n) = self.value(x).dims2("mean_rows")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, v) in out.iter_mut().zip(&src[i * n..(i + 1) * n]) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        self.push_op("mean_rows", Tensor::from_parts(vec![1, n], out), Op::MeanRows(x), &[x])
    }

    /// Normalises each row over the last axis to zero mean and unit variance
    /// (biased variance, `eps` added inside the square root). No affine part.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var, TensorError> {
        if eps <= 0.0 {
            return Err(TensorError::invalid("layer_norm", "eps must be positive"));
        }
        let src = self.value(x);
        let n = last_dim(src);
        let rows = src.numel() / n;
        let mut out = src.data().to_vec();
        let mut inv_std = Vec::with_capacity(rows);
        for row in out.chunks_mut(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        let t = Tensor::from_parts(src.shape().to_vec(), out);
        self.push_op("layer_norm", t, Op::LayerNorm { x, inv_std }, &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let src = self.value(x);
        let n = last_dim(src);
        let mut out = src.data().to_vec();
        out.chunks_mut(n).for_each(softmax_in_place);
        let t = Tensor::from_parts(src.shape().to_vec(), out);
        self.push_op("softmax", t, Op::Softmax(x), &[x])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = self.value(x).map(gelu);
        self.push_op("gelu", out, Op::Gelu(x), &[x])
    }

    /// Multi-head scaled dot-product attention without a causal mask.
    ///
    /// `q` is `n_q × d`, `k` and `v` are `n_k × d`; the model dimension is split
    /// into `heads` contiguous column blocks.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var, TensorError> {
        let (nq, d) = self.value(q).dims2("attention")?;
        let (nk, dk) = self.value(k).dims2("attention")?;
        if self.shape(v) != [nk, dk] || dk != d {
            return Err(TensorError::shape(
                "attention",
                format!("q {:?} k {:?} v {:?}", self.shape(q), self.shape(k), self.shape(v)),
            ));
        }
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::invalid(
                "attention",
                format!("dim {d} not divisible into {heads} heads"),
            ));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut out = vec![0.0; nq * d];
        let mut probs = Vec::with_capacity(heads * nq * nk);
        for h in 0..heads {
            let qh = head_cols(qd, nq, d, h, dh);
            let kh = head_cols(kd, nk, d, h, dh);
            let vh = head_cols(vd, nk, d, h, dh);
            let mut p = kernels::matmul_nt(Exec::default(), &qh, &kh, nq, dh, nk);
            p.iter_mut().for_each(|s| *s *= scale);
            p.chunks_mut(nk).for_each(softmax_in_place);
            let oh = kernels::matmul(Exec::default(), &p, &vh, nq, nk, dh);
            add_head_cols(&mut out, &oh, nq, d, h, dh);
            probs.extend_from_slice(&p);
        }
        let t = Tensor::from_parts(vec![nq, d], out);
        self.push_op(
            "attention",
            t,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            &[q, k, v],
        )
    }

    /// Mean softmax cross-entropy of `B × C` logits against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let (b, c) = self.value(logits).dims2("cross_entropy")?;
        if labels.len() != b {
            return Err(TensorError::shape(
                "cross_entropy",
                format!("{} labels for {b} rows", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(TensorError::invalid(
                "cross_entropy",
                format!("label {bad} out of {c} classes"),
            ));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (row, &y) in probs.chunks_mut(c).zip(labels) {
            softmax_in_place(row);
            loss -= row[y].max(f64::MIN_POSITIVE).ln();
        }
        loss /= b as f64;
        self.push_op(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Linear layer `x · w + b` with `w` of shape `in × out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(self.shape(loss).to_vec(), vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &gout, &mut grads);
            // Keep intermediate gradients available to callers.
            grads[idx] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node, gout: &Tensor, grads: &mut [Option<Tensor>]) {
        let exec = Exec::default();
        let g = gout.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2("matmul").unwrap();
                let n = self.shape(*b)[1];
                if self.nodes[a.0].requires_grad {
                    let da = kernels::matmul_nt(exec, g, self.value(*b).data(), m, n, k);
                    self.accumulate(grads, *a, Tensor::from_parts(vec![m, k], da));
                }
                if self.nodes[b.0].requires_grad {
                    let db = kernels::matmul_tn(exec, self.value(*a).data(), g, m, k, n);
                    self.accumulate(grads, *b, Tensor::from_parts(vec![k, n], db));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                self.accumulate(grads, *b, gout.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                self.accumulate(grads, *b, gout.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let ga = gout.zip_map(self.value(*b), |x, y| x * y).unwrap();
                let gb = gout.zip_map(self.value(*a), |x, y| x * y).unwrap();
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::AddRow(x, r) => {
                self.accumulate(grads, *x, gout.clone());
                let n = self.value(*r).numel();
                let mut gr = vec![0.0; n];
                g.chunks(n).for_each(|row| {
                    gr.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                });
                self.accumulate(grads, *r, Tensor::from_parts(self.shape(*r).to_vec(), gr));
            }
            Op::MulRow(x, r) => {
                let rv = self.value(*r).data();
                let n = rv.len();
                let gx: Vec<f64> = g.iter().enumerate().map(|(i, v)| v * rv[i % n]).collect();
                self.accumulate(grads, *x, Tensor::from_parts(gout.shape().to_vec(), gx));
                let xv = self.value(*x).data();
                let mut gr = vec![0.0; n];
                for (i, (gv, xv)) in g.iter().zip(xv).enumerate() {
                    gr[i % n] += gv * xv;
                }
                self.accumulate(grads, *r, Tensor::from_parts(self.shape(*r).to_vec(), gr));
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, gout.map(|v| v * c)),
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                self.accumulate(grads, *x, Tensor::from_parts(shape, g.to_vec()));
            }
            Op::Transpose(x) => self.accumulate(grads, *x, gout.transpose().unwrap()),
            Op::GatherRows(x, idx) => {
                let (m, n) = self.value(*x).dims2("gather_rows").unwrap();
                let mut gx = vec![0.0; m * n];
                for (r, &i) in idx.iter().enumerate() {
                    gx[i * n..(i + 1) * n]
                        .iter_mut()
                        .zip(&g[r * n..(r + 1) * n])
                        .for_each(|(a, b)| *a += b);
                }
                self.accumulate(grads, *x, Tensor::from_parts(vec![m, n], gx));
            }
            Op::ScatterRows(x, idx) => {
                let n = gout.shape()[1];
                let mut gx = Vec::with_capacity(idx.len() * n);
                for &i in idx {
                    gx.extend_from_slice(&g[i * n..(i + 1) * n]);
                }
                self.accumulate(grads, *x, Tensor::from_parts(vec![idx.len(), n], gx));
            }
            Op::Sum(x) => {
                let shape = self.shape(*x).to_vec();
                self.accumulate(grads, *x, Tensor::full(shape, g[0]));
            }
            Op::Mean(x) => {
                let t = self.value(*x);
                let v = g[0] / t.numel() as f64;
                self.accumulate(grads, *x, Tensor::full(t.shape().to_vec(), v));
            }
            Op::MeanRows(x) => {
                let (m, n) = self.value(*x).dims2("mean_rows").unwrap();
                let gx = (0..m * n).map(|i| g[i % n] / m as f64).collect();
                self.accumulate(grads, *x, Tensor::from_parts(vec![m, n], gx));
            }
            Op::LayerNorm { x, inv_std } => {
                let xhat = node.value.data();
                let n = last_dim(&node.value);
                let mut gx = vec![0.0; xhat.len()];
                for (r, is) in inv_std.iter().enumerate() {
                    let span = r * n..(r + 1) * n;
                    let (gr, xr) = (&g[span.clone()], &xhat[span.clone()]);
                    let mean_g = gr.iter().sum::<f64>() / n as f64;
                    let mean_gx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for ((o, gi), xi) in gx[span].iter_mut().zip(gr).zip(xr) {
                        *o = is * (gi - mean_g - xi * mean_gx);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(node.value.shape().to_vec(), gx));
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let n = last_dim(&node.value);
                let mut gx = vec![0.0; y.len()];
                for ((o, gr), yr) in gx.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((oi, gi), yi) in o.iter_mut().zip(gr).zip(yr) {
                        *oi = yi * (gi - dot);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(node.value.shape().to_vec(), gx));
            }
            Op::Gelu(x) => {
                let gx = gout.zip_map(self.value(*x), |gi, xi| gi * gelu_grad(xi)).unwrap();
                self.accumulate(grads, *x, gx);
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let (nq, d) = self.value(*q).dims2("attention").unwrap();
                let nk = self.shape(*k)[0];
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qd, kd, vd) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let mut gq = vec![0.0; nq * d];
                let mut gk = vec![0.0; nk * d];
                let mut gv = vec![0.0; nk * d];
                for h in 0..*heads {
                    let p = &probs[h * nq * nk..(h + 1) * nq * nk];
                    let go = head_cols(g, nq, d, h, dh);
                    let qh = head_cols(qd, nq, d, h, dh);
                    let kh = head_cols(kd, nk, d, h, dh);
                    let vh = head_cols(vd, nk, d, h, dh);
                    let gvh = kernels::matmul_tn(exec, p, &go, nq, nk, dh);
                    add_head_cols(&mut gv, &gvh, nk, d, h, dh);
                    let mut ds = kernels::matmul_nt(exec, &go, &vh, nq, dh, nk);
                    for (dsr, pr) in ds.chunks_mut(nk).zip(p.chunks(nk)) {
                        let dot: f64 = dsr.iter().zip(pr).map(|(a, b)| a * b).sum();
                        for (s, pi) in dsr.iter_mut().zip(pr) {
                            *s = pi * (*s - dot) * scale;
                        }
                    }
                    let gqh = kernels::matmul(exec, &ds, &kh, nq, nk, dh);
                    add_head_cols(&mut gq, &gqh, nq, d, h, dh);
                    let gkh = kernels::matmul_tn(exec, &ds, &qh, nq, nk, dh);
                    add_head_cols(&mut gk, &gkh, nk, d, h, dh);
                }
                self.accumulate(grads, *q, Tensor::from_parts(vec![nq, d], gq));
                self.accumulate(grads, *k, Tensor::from_parts(vec![nk, d], gk));
                self.accumulate(grads, *v, Tensor::from_parts(vec![nk, d], gv));
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let (b, c) = self.value(*logits).dims2("cross_entropy").unwrap();
                let mut gl = probs.clone();
                for (r, &y) in labels.iter().enumerate() {
                    gl[r * c + y] -= 1.0;
                }
                let s = g[0] / b as f64;
                gl.iter_mut().for_each(|v| *v *= s);
                self.accumulate(grads, *logits, Tensor::from_parts(vec![b, c], gl));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_fn([2, 3, 4], |i| i as f64 - 7.0));
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &Tensor::ones([2, 3, 4]));
    }

    #[test]
    fn softmax_of_constant_is_uniform_with_zero_sum_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::full([1, 5], 2.5));
        let y = g.softmax(x).unwrap();
        assert!(g.value(y).data().iter().all(|&p| (p - 0.2).abs() < 1e-15));
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::ones([2, 2]));
        let b = g.param(Tensor::ones([2, 2]));
        let c = g.mul(a, b).unwrap();
        let s = g.sum(c).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(a).is_none());
        assert!(grads.get(b).is_some());
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut g = Graph::new();
        let a = g.param(Tensor::ones([2, 3]));
        let b = g.param(Tensor::ones([2, 3]));
        assert!(matches!(g.matmul(a, b), Err(TensorError::Shape { .. })));
        let c = g.param(Tensor::ones([3, 2]));
        assert!(g.add(a, c).is_err());
        assert!(g.gather_rows(a, &[5]).is_err());
        assert!(g.scatter_rows(a, &[0, 0], 4).is_err());
        assert!(g.backward(a).is_err());
    }

    #[test]
    fn non_finite_results_are_errors() {
        let mut g = Graph::new();
        let a = g.param(Tensor::full([1, 2], 1e200));
        assert_eq!(
            g.mul(a, a).unwrap_err(),
            TensorError::NonFinite { op: "mul" }
        );
    }

    #[test]
    fn layer_norm_rows_are_standardised() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_fn([4, 16], |i| ((i * 7919) % 31) as f64 * 0.3 - 2.0));
        let y = g.layer_norm(x, 1e-12).unwrap();
        for r in 0..4 {
            let row = g.value(y).row(r);
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() <= 1e-6);
            assert!((var - 1.0).abs() <= 1e-5);
        }
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_classes() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros([2, 4]));
        let l = g.cross_entropy(x, &[0, 3]).unwrap();
        assert!((g.value(l).item().unwrap() - 4f64.ln()).abs() < 1e-15);
    }
}
