use rand::Rng;
use serde::{Deserialize, Serialize};

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

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReduceMode {
    Sum,
    Mean,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Unary {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Scale(f64),
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(Binary, Var, Var),
    AddBias(Var, Var),
    Unary(Unary, Var),
    MulConst(Var, Vec<f64>),
    ScaleRows(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Sum(Var),
    SegmentReduce {
        input: Var,
        ids: Vec<usize>,
        mode: ReduceMode,
        // per-segment counts for mean; per (segment, col) winning row for max
        counts: Vec<usize>,
        argmax: Vec<usize>,
    },
    SegmentSoftmax(Var, Vec<usize>),
    MaskedSoftmax(Var, Vec<bool>),
    Dropout(Var, Vec<f64>),
    GraphNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        alpha: Var,
        centered: Vec<f64>,
        std: Vec<f64>,
    },
    MaskedKl {
        probs: Var,
        target: Vec<f64>,
        weight: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Ordered record of executed operations.
///
/// Every node's parents have smaller indices, so a reverse sweep over the
/// node list is a valid topological order for adjoint propagation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
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

/// `c = a * b` for row-major operands, with optional transposes via strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths are checked above and the strides describe
    // in-bounds row-major (or transposed row-major) views of them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.req(v)
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ---------------------------------------------------------------- ops

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape().len() != 2 || vb.shape().len() != 2 || va.cols() != vb.rows() {
            return Err(Error::dim("matmul", va.shape(), vb.shape()));
        }
        let (m, k, n) = (va.rows(), va.cols(), vb.cols());
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            va.data(),
            (k as isize, 1),
            vb.data(),
            (n as isize, 1),
            &mut out,
            false,
        );
        let rg = self.req(a) || self.req(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let shape = if va.shape() == vb.shape() || vb.numel() == 1 {
            va.shape().to_vec()
        } else if va.numel() == 1 {
            vb.shape().to_vec()
        } else {
            return Err(Error::dim("elementwise", va.shape(), vb.shape()));
        };
        let n: usize = shape.iter().product();
        let (da, db) = (va.data(), vb.data());
        let (sa, sb) = (da.len() != 1 || n == 1, db.len() != 1 || n == 1);
        let out: Vec<f64> = (0..n)
            .map(|i| {
                let x = if sa { da[i] } else { da[0] };
                let y = if sb { db[i] } else { db[0] };
                match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                }
            })
            .collect();
        let rg = self.req(a) || self.req(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Binary(kind, a, b), rg))
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

    /// `x[n x d] + bias[d]` applied to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let d = vx.cols();
        if vb.numel() != d {
            return Err(Error::dim("add_bias", vx.shape(), vb.shape()));
        }
        let mut out = vx.data().to_vec();
        for row in out.chunks_mut(d.max(1)) {
            add_into(row, vb.data());
        }
        let shape = vx.shape().to_vec();
        let rg = self.req(x) || self.req(bias);
        Ok(self.push(Tensor::new(shape, out)?, Op::AddBias(x, bias), rg))
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Var {
        let vx = self.value(x);
        let out: Vec<f64> = vx
            .data()
            .iter()
            .map(|&v| match kind {
                Unary::Relu => {
                    if v > 0.0 {
                        v
                    } else {
                        0.0
                    }
                }
                Unary::LeakyRelu(s) => {
                    if v > 0.0 {
                        v
                    } else {
                        s * v
                    }
                }
                Unary::Sigmoid => sigmoid(v),
                Unary::Scale(c) => c * v,
            })
            .collect();
        let t = Tensor {
            shape: vx.shape().to_vec(),
            data: out,
        };
        let rg = self.req(x);
        self.push(t, Op::Unary(kind, x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Unary::Relu, x)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(Unary::LeakyRelu(slope), x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(Unary::Scale(c), x)
    }

    /// Elementwise product with a constant (non-differentiable) factor.
    pub fn mul_const(&mut self, x: Var, factor: Vec<f64>) -> Result<Var> {
        let vx = self.value(x);
        if factor.len() != vx.numel() {
            return Err(Error::dim("mul_const", vx.shape(), &[factor.len()]));
        }
        let out = vx.data().iter().zip(&factor).map(|(a, b)| a * b).collect();
        let t = Tensor {
            shape: vx.shape().to_vec(),
            data: out,
        };
        let rg = self.req(x);
        Ok(self.push(t, Op::MulConst(x, factor), rg))
    }

    /// Multiplies row `r` of `x` by `w[r]`; `w` holds one value per row.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        let (n, d) = (vx.rows(), vx.cols());
        if vw.numel() != n {
            return Err(Error::dim("scale_rows", vx.shape(), vw.shape()));
        }
        let mut out = vx.data().to_vec();
        for (r, row) in out.chunks_mut(d.max(1)).enumerate().take(n) {
            let s = vw.data()[r];
            row.iter_mut().for_each(|v| *v *= s);
        }
        let t = Tensor {
            shape: vx.shape().to_vec(),
            data: out,
        };
        let rg = self.req(x) || self.req(w);
        Ok(self.push(t, Op::ScaleRows(x, w), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.value(p).rows(),
            None => return Err(Error::param("concat_cols", "no inputs")),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(Error::dim("concat_cols", &[rows], v.shape()));
            }
            widths.push(v.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let d = self.value(p).data();
            for r in 0..rows {
                out[r * total + off..r * total + off + w].copy_from_slice(&d[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let rg = parts.iter().any(|&p| self.req(p));
        Ok(self.push(
            Tensor::new(vec![rows, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = match parts.first() {
            Some(&p) => self.value(p).cols(),
            None => return Err(Error::param("concat_rows", "no inputs")),
        };
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::dim("concat_rows", &[cols], v.shape()));
            }
            rows += v.rows();
            out.extend_from_slice(v.data());
        }
        let rg = parts.iter().any(|&p| self.req(p));
        Ok(self.push(
            Tensor::new(vec![rows, cols], out)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let (n, d) = (vx.rows(), vx.cols());
        let mut out = Vec::with_capacity(index.len() * d);
        for &i in index {
            if i >= n {
                return Err(Error::Index {
                    what: "gather_rows",
                    index: i,
                    len: n,
                });
            }
            out.extend_from_slice(&vx.data()[i * d..(i + 1) * d]);
        }
        let rg = self.req(x);
        Ok(self.push(
            Tensor::new(vec![index.len(), d], out)?,
            Op::GatherRows(x, index.to_vec()),
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let n: usize = shape.iter().product();
        if n != vx.numel() {
            return Err(Error::dim("reshape", vx.shape(), shape));
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data: vx.data().to_vec(),
        };
        let rg = self.req(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.req(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Reduces rows of `values` into `n_segments` buckets; empty buckets are zero rows.
    pub fn segment_reduce(
        &mut self,
        values: Var,
        ids: &[usize],
        n_segments: usize,
        mode: ReduceMode,
    ) -> Result<Var> {
        let v = self.value(values);
        let (e, d) = (v.rows(), v.cols());
        if ids.len() != e {
            return Err(Error::dim("segment_reduce", v.shape(), &[ids.len()]));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= n_segments) {
            return Err(Error::Index {
                what: "segment id",
                index: bad,
                len: n_segments,
            });
        }
        let data = v.data();
        let mut out = vec![0.0; n_segments * d];
        let mut counts = vec![0usize; n_segments];
        let mut argmax = Vec::new();
        match mode {
            ReduceMode::Sum | ReduceMode::Mean => {
                for (r, &s) in ids.iter().enumerate() {
                    counts[s] += 1;
                    add_into(&mut out[s * d..(s + 1) * d], &data[r * d..(r + 1) * d]);
                }
                if mode == ReduceMode::Mean {
                    for s in 0..n_segments {
                        if counts[s] > 0 {
                            let inv = 1.0 / counts[s] as f64;
                            out[s * d..(s + 1) * d].iter_mut().for_each(|x| *x *= inv);
                        }
                    }
                }
            }
            ReduceMode::Max => {
                argmax = vec![usize::MAX; n_segments * d];
                for (r, &s) in ids.iter().enumerate() {
                    counts[s] += 1;
                    for j in 0..d {
                        let slot = s * d + j;
                        let x = data[r * d + j];
                        if argmax[slot] == usize::MAX || x > out[slot] {
                            out[slot] = x;
                            argmax[slot] = r;
                        }
                    }
                }
            }
        }
        let rg = self.req(values);
        Ok(self.push(
            Tensor::new(vec![n_segments, d], out)?,
            Op::SegmentReduce {
                input: values,
                ids: ids.to_vec(),
                mode,
                counts,
                argmax,
            },
            rg,
        ))
    }

    /// Softmax of a score vector within each segment.
    pub fn segment_softmax(&mut self, scores: Var, ids: &[usize], n_segments: usize) -> Result<Var> {
        let v = self.value(scores);
        if v.numel() != ids.len() {
            return Err(Error::dim("segment_softmax", v.shape(), &[ids.len()]));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= n_segments) {
            return Err(Error::Index {
                what: "segment id",
                index: bad,
                len: n_segments,
            });
        }
        let s = v.data();
        let mut mx = vec![f64::NEG_INFINITY; n_segments];
        for (i, &g) in ids.iter().enumerate() {
            mx[g] = mx[g].max(s[i]);
        }
        let mut out: Vec<f64> = ids.iter().enumerate().map(|(i, &g)| (s[i] - mx[g]).exp()).collect();
        let mut den = vec![0.0; n_segments];
        for (i, &g) in ids.iter().enumerate() {
            den[g] += out[i];
        }
        for (i, &g) in ids.iter().enumerate() {
            out[i] /= den[g];
        }
        let shape = v.shape().to_vec();
        let rg = self.req(scores);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::SegmentSoftmax(scores, ids.to_vec()),
            rg,
        ))
    }

    /// Row-wise softmax over the last dimension restricted to `mask`.
    /// Masked entries are exactly zero.
    pub fn masked_softmax(&mut self, logits: Var, mask: &[bool]) -> Result<Var> {
        let v = self.value(logits);
        if mask.len() != v.numel() {
            return Err(Error::dim("masked_softmax", v.shape(), &[mask.len()]));
        }
        let k = *v.shape().last().unwrap_or(&1);
        let mut out = vec![0.0; v.numel()];
        if k > 0 {
            for (r, (row, m)) in v.data().chunks(k).zip(mask.chunks(k)).enumerate() {
                let mx = row
                    .iter()
                    .zip(m)
                    .filter(|(_, &ok)| ok)
                    .map(|(&x, _)| x)
                    .fold(f64::NEG_INFINITY, f64::max);
                if mx == f64::NEG_INFINITY {
                    return Err(Error::DegenerateMask);
                }
                let o = &mut out[r * k..(r + 1) * k];
                let mut den = 0.0;
                for j in 0..k {
                    if m[j] {
                        o[j] = (row[j] - mx).exp();
                        den += o[j];
                    }
                }
                o.iter_mut().for_each(|x| *x /= den);
            }
        }
        let shape = v.shape().to_vec();
        let rg = self.req(logits);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::MaskedSoftmax(logits, mask.to_vec()),
            rg,
        ))
    }

    /// Inverted dropout. Returns `x` itself when inactive.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        #[allow(clippy::manual_range_contains)]
        if !(rate >= 0.0 && rate < 1.0) {
            return Err(Error::param("dropout rate", format!("{rate} not in [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(x).numel();
        let factor: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let vx = self.value(x);
        let out = vx.data().iter().zip(&factor).map(|(a, b)| a * b).collect();
        let t = Tensor {
            shape: vx.shape().to_vec(),
            data: out,
        };
        let rg = self.req(x);
        Ok(self.push(t, Op::Dropout(x, factor), rg))
    }

    /// Feature-wise normalization across the rows of `h`:
    /// `gamma * (h - alpha * mean) / sqrt(var + eps) + beta`.
    pub fn graph_norm(&mut self, h: Var, gamma: Var, beta: Var, alpha: Var, eps: f64) -> Result<Var> {
        let vh = self.value(h);
        let (n, d) = (vh.rows(), vh.cols());
        for p in [gamma, beta, alpha] {
            if self.value(p).numel() != d {
                return Err(Error::dim("graph_norm", vh.shape(), self.value(p).shape()));
            }
        }
        if n == 0 {
            return Err(Error::param("graph_norm", "empty node batch"));
        }
        let x = vh.data();
        let (g, b, a) = (
            self.value(gamma).data(),
            self.value(beta).data(),
            self.value(alpha).data(),
        );
        let mut mean = vec![0.0; d];
        for row in x.chunks(d) {
            add_into(&mut mean, row);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut centered = vec![0.0; n * d];
        let mut var = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                let c = x[i * d + j] - a[j] * mean[j];
                centered[i * d + j] = c;
                var[j] += c * c;
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n as f64 + eps).sqrt()).collect();
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                out[i * d + j] = g[j] * centered[i * d + j] / std[j] + b[j];
            }
        }
        let shape = vh.shape().to_vec();
        let rg = [h, gamma, beta, alpha].iter().any(|&v| self.req(v));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::GraphNorm {
                input: h,
                gamma,
                beta,
                alpha,
                centered,
                std,
            },
            rg,
        ))
    }

    /// `sum_i weight_i * target_i * ln(target_i / probs_i)` over entries with
    /// positive target and weight; zero-target terms contribute exactly 0.
    pub fn masked_kl(&mut self, probs: Var, target: &[f64], weight: &[f64]) -> Result<Var> {
        let vp = self.value(probs);
        if target.len() != vp.numel() || weight.len() != vp.numel() {
            return Err(Error::dim("masked_kl", vp.shape(), &[target.len()]));
        }
        let p = vp.data();
        let mut total = 0.0;
        for i in 0..p.len() {
            let (t, w) = (target[i], weight[i]);
            if t > 0.0 && w != 0.0 {
                total += w * t * (t.ln() - p[i].ln());
            }
        }
        let rg = self.req(probs);
        Ok(self.push(
            Tensor::scalar(total),
            Op::MaskedKl {
                probs,
                target: target.to_vec(),
                weight: weight.to_vec(),
            },
            rg,
        ))
    }

    // ----------------------------------------------------------- backward

    /// Accumulates d(loss)/d(node) into the grad buffer of every
    /// `requires_grad` node reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::dim("backward", lv.shape(), &[]));
        }
        if !self.req(loss) {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut adj)?;
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => add_into(acc, &g),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn send(&self, adj: &mut [Option<Vec<f64>>], to: Var, contrib: Vec<f64>) {
        if !self.req(to) {
            return;
        }
        match &mut adj[to.0] {
            Some(acc) => add_into(acc, &contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn send_with(&self, adj: &mut [Option<Vec<f64>>], to: Var, f: impl FnOnce(&mut [f64])) {
        if !self.req(to) {
            return;
        }
        let n = self.value(to).numel();
        let slot = adj[to.0].get_or_insert_with(|| vec![0.0; n]);
        f(slot);
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) -> Result<()> {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                // dA = dC B^T
                self.send_with(adj, *a, |acc| {
                    gemm(m, n, k, g, (n as isize, 1), vb.data(), (1, n as isize), acc, true)
                });
                // dB = A^T dC
                self.send_with(adj, *b, |acc| {
                    gemm(k, m, n, va.data(), (1, k as isize), g, (n as isize, 1), acc, true)
                });
            }
            Op::Binary(kind, a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let n = out.numel();
                let ea = |idx: usize| if va.numel() == n { va.data()[idx] } else { va.data()[0] };
                let eb = |idx: usize| if vb.numel() == n { vb.data()[idx] } else { vb.data()[0] };
                for (side, target, len) in [(0, *a, va.numel()), (1, *b, vb.numel())] {
                    self.send_with(adj, target, |acc| {
                        for idx in 0..n {
                            let d = match (kind, side) {
                                (Binary::Add, _) => g[idx],
                                (Binary::Sub, 0) => g[idx],
                                (Binary::Sub, _) => -g[idx],
                                (Binary::Mul, 0) => g[idx] * eb(idx),
                                (Binary::Mul, _) => g[idx] * ea(idx),
                            };
                            if len == n {
                                acc[idx] += d;
                            } else {
                                acc[0] += d;
                            }
                        }
                    });
                }
            }
            Op::AddBias(x, b) => {
                self.send(adj, *x, g.to_vec());
                let d = self.value(*b).numel().max(1);
                self.send_with(adj, *b, |acc| {
                    for row in g.chunks(d) {
                        add_into(acc, row);
                    }
                });
            }
            Op::Unary(kind, x) => {
                let vx = self.value(*x).data();
                let o = out.data();
                let contrib = (0..g.len())
                    .map(|idx| match kind {
                        Unary::Relu => {
                            if vx[idx] > 0.0 {
                                g[idx]
                            } else {
                                0.0
                            }
                        }
                        Unary::LeakyRelu(s) => {
                            if vx[idx] > 0.0 {
                                g[idx]
                            } else {
                                s * g[idx]
                            }
                        }
                        Unary::Sigmoid => g[idx] * o[idx] * (1.0 - o[idx]),
                        Unary::Scale(c) => c * g[idx],
                    })
                    .collect();
                self.send(adj, *x, contrib);
            }
            Op::MulConst(x, factor) | Op::Dropout(x, factor) => {
                self.send(adj, *x, g.iter().zip(factor).map(|(a, b)| a * b).collect());
            }
            Op::ScaleRows(x, w) => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let d = vx.cols().max(1);
                self.send_with(adj, *x, |acc| {
                    for (r, (a, gr)) in acc.chunks_mut(d).zip(g.chunks(d)).enumerate() {
                        let s = vw.data()[r];
                        a.iter_mut().zip(gr).for_each(|(a, g)| *a += g * s);
                    }
                });
                self.send_with(adj, *w, |acc| {
                    for (r, (xr, gr)) in vx.data().chunks(d).zip(g.chunks(d)).enumerate() {
                        acc[r] += xr.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let rows = out.rows();
                let total = out.cols();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.send_with(adj, p, |acc| {
                        for r in 0..rows {
                            add_into(
                                &mut acc[r * w..(r + 1) * w],
                                &g[r * total + off..r * total + off + w],
                            );
                        }
                    });
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    self.send_with(adj, p, |acc| add_into(acc, &g[off..off + n]));
                    off += n;
                }
            }
            Op::GatherRows(x, index) => {
                let d = out.cols();
                self.send_with(adj, *x, |acc| {
                    for (r, &src) in index.iter().enumerate() {
                        add_into(&mut acc[src * d..(src + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::Reshape(x) => self.send(adj, *x, g.to_vec()),
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.send(adj, *x, vec![g[0]; n]);
            }
            Op::SegmentReduce {
                input,
                ids,
                mode,
                counts,
                argmax,
            } => {
                let d = out.cols();
                self.send_with(adj, *input, |acc| match mode {
                    ReduceMode::Sum => {
                        for (r, &s) in ids.iter().enumerate() {
                            add_into(&mut acc[r * d..(r + 1) * d], &g[s * d..(s + 1) * d]);
                        }
                    }
                    ReduceMode::Mean => {
                        for (r, &s) in ids.iter().enumerate() {
                            let inv = 1.0 / counts[s] as f64;
                            for j in 0..d {
                                acc[r * d + j] += g[s * d + j] * inv;
                            }
                        }
                    }
                    ReduceMode::Max => {
                        for (slot, &r) in argmax.iter().enumerate() {
                            if r != usize::MAX {
                                acc[r * d + slot % d] += g[slot];
                            }
                        }
                    }
                });
            }
            Op::SegmentSoftmax(x, ids) => {
                let y = out.data();
                let n_seg = ids.iter().copied().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; n_seg];
                for (idx, &s) in ids.iter().enumerate() {
                    dot[s] += g[idx] * y[idx];
                }
                let contrib = ids
                    .iter()
                    .enumerate()
                    .map(|(idx, &s)| y[idx] * (g[idx] - dot[s]))
                    .collect();
                self.send(adj, *x, contrib);
            }
            Op::MaskedSoftmax(x, mask) => {
                let y = out.data();
                let k = *out.shape().last().unwrap_or(&1);
                let mut contrib = vec![0.0; y.len()];
                if k > 0 {
                    for r in 0..y.len() / k {
                        let rng = r * k..(r + 1) * k;
                        let dot: f64 = rng
                            .clone()
                            .filter(|&j| mask[j])
                            .map(|j| g[j] * y[j])
                            .sum();
                        for j in rng {
                            if mask[j] {
                                contrib[j] = y[j] * (g[j] - dot);
                            }
                        }
                    }
                }
                self.send(adj, *x, contrib);
            }
            Op::GraphNorm {
                input,
                gamma,
                beta,
                alpha,
                centered,
                std,
            } => {
                let (n, d) = (out.rows(), out.cols());
                let gm = self.value(*gamma).data();
                let al = self.value(*alpha).data();
                let x = self.value(*input).data();
                let nf = n as f64;
                self.send_with(adj, *beta, |acc| {
                    for row in g.chunks(d) {
                        add_into(acc, row);
                    }
                });
                self.send_with(adj, *gamma, |acc| {
                    for i in 0..n {
                        for j in 0..d {
                            acc[j] += g[i * d + j] * centered[i * d + j] / std[j];
                        }
                    }
                });
                // dc = dn / s - c * sum(dn * c) / (n s^3), with dn = g * gamma
                let mut gc = vec![0.0; d];
                for i in 0..n {
                    for j in 0..d {
                        gc[j] += g[i * d + j] * gm[j] * centered[i * d + j];
                    }
                }
                let mut dc = vec![0.0; n * d];
                let mut dc_sum = vec![0.0; d];
                for i in 0..n {
                    for j in 0..d {
                        let s = std[j];
                        let v = g[i * d + j] * gm[j] / s - centered[i * d + j] * gc[j] / (nf * s * s * s);
                        dc[i * d + j] = v;
                        dc_sum[j] += v;
                    }
                }
                self.send_with(adj, *alpha, |acc| {
                    for j in 0..d {
                        let mean: f64 = (0..n).map(|i| x[i * d + j]).sum::<f64>() / nf;
                        acc[j] -= mean * dc_sum[j];
                    }
                });
                self.send_with(adj, *input, |acc| {
                    for i in 0..n {
                        for j in 0..d {
                            acc[i * d + j] += dc[i * d + j] - al[j] * dc_sum[j] / nf;
                        }
                    }
                });
            }
            Op::MaskedKl {
                probs,
                target,
                weight,
            } => {
                let p = self.value(*probs).data();
                let contrib = (0..p.len())
                    .map(|idx| {
                        let (t, w) = (target[idx], weight[idx]);
                        if t > 0.0 && w != 0.0 {
                            -g[0] * w * t / p[idx]
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.send(adj, *probs, contrib);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{assert_grads_match, rand_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mat(r: usize, c: usize, d: &[f64]) -> Tensor {
        Tensor::matrix(r, c, d.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_projector() {
        let mut t = Tape::new();
        let i2 = t.constant(mat(2, 2, &[1., 0., 0., 1.]));
        let m = t.constant(mat(2, 2, &[1., 2., 3., 4.]));
        let y = t.matmul(i2, m).unwrap();
        assert_eq!(t.value(y).data(), &[1., 2., 3., 4.]);

        let p = t.constant(mat(2, 2, &[1., 0., 0., 0.]));
        let v = t.constant(mat(2, 1, &[5., 7.]));
        let y = t.matmul(p, v).unwrap();
        assert_eq!(t.value(y).data(), &[5., 0.]);
    }

    #[test]
    fn matmul_shape_mismatch_names_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn elementwise_examples() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![-1., 0., 2.]));
        let r = t.relu(x);
        assert_eq!(t.value(r).data(), &[0., 0., 2.]);
        let z = t.constant(Tensor::scalar(0.0));
        let s = t.sigmoid(z);
        assert_eq!(t.value(s).data(), &[0.5]);
        let m = t.constant(Tensor::scalar(-2.0));
        let l = t.leaky_relu(m, 0.2);
        assert!((t.value(l).data()[0] + 0.4).abs() < 1e-15);

        let a = t.constant(Tensor::vector(vec![1., 2.]));
        let b = t.constant(Tensor::vector(vec![1., 2., 3.]));
        assert!(t.add(a, b).is_err());
        let s2 = t.constant(Tensor::scalar(2.0));
        let y = t.mul(s2, b).unwrap();
        assert_eq!(t.value(y).data(), &[2., 4., 6.]);
    }

    #[test]
    fn segment_reduce_examples() {
        let mut t = Tape::new();
        let v = t.constant(mat(3, 1, &[1., 2., 3.]));
        let s = t.segment_reduce(v, &[0, 0, 1], 2, ReduceMode::Sum).unwrap();
        assert_eq!(t.value(s).data(), &[3., 3.]);
        let m = t.segment_reduce(v, &[0, 0, 1], 2, ReduceMode::Mean).unwrap();
        assert_eq!(t.value(m).data(), &[1.5, 3.]);
        let e = t.segment_reduce(v, &[0, 0, 1], 3, ReduceMode::Max).unwrap();
        assert_eq!(t.value(e).data(), &[2., 3., 0.]);
        assert!(matches!(
            t.segment_reduce(v, &[0, 3, 1], 3, ReduceMode::Sum),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn masked_softmax_examples() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::vector(vec![0., 0., 0.]));
        let p = t.masked_softmax(z, &[true; 3]).unwrap();
        for &v in t.value(p).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let z = t.constant(Tensor::vector(vec![5., 1.]));
        let p = t.masked_softmax(z, &[true, false]).unwrap();
        assert_eq!(t.value(p).data(), &[1.0, 0.0]);
        let z = t.constant(Tensor::vector(vec![1., 2., 3.]));
        let p = t.masked_softmax(z, &[true, true, false]).unwrap();
        let (e1, e2) = (1f64.exp(), 2f64.exp());
        let want = [e1 / (e1 + e2), e2 / (e1 + e2), 0.0];
        for (a, b) in t.value(p).data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let z = t.constant(Tensor::vector(vec![1., 2.]));
        assert!(matches!(t.masked_softmax(z, &[false, false]), Err(Error::DegenerateMask)));
    }

    #[test]
    fn segment_softmax_examples() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::vector(vec![0., 0.]));
        let p = t.segment_softmax(z, &[0, 0], 1).unwrap();
        assert_eq!(t.value(p).data(), &[0.5, 0.5]);
        let p = t.segment_softmax(z, &[0, 1], 2).unwrap();
        assert_eq!(t.value(p).data(), &[1.0, 1.0]);
        let z = t.constant(Tensor::vector(vec![1., 2., 1.]));
        let p = t.segment_softmax(z, &[0, 0, 1], 2).unwrap();
        let s = 1f64.exp() / (1f64.exp() + 2f64.exp());
        let got = t.value(p).data();
        assert!((got[0] - s).abs() < 1e-15 && (got[1] - (1.0 - s)).abs() < 1e-15);
        assert_eq!(got[2], 1.0);
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1.0; 8]));
        assert_eq!(t.dropout(x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(t.dropout(x, 0.7, false, &mut rng).unwrap(), x);
        assert!(t.dropout(x, 1.0, true, &mut rng).is_err());
        assert!(t.dropout(x, -0.1, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let input = [0.5, -2.0, 3.0, 1.0];
        let mut acc = [0.0; 4];
        let trials = 10_000;
        for _ in 0..trials {
            let mut t = Tape::new();
            let x = t.constant(Tensor::vector(input.to_vec()));
            let y = t.dropout(x, 0.5, true, &mut rng).unwrap();
            add_into(&mut acc, t.value(y).data());
        }
        for (a, x) in acc.iter().zip(input) {
            let mean = a / trials as f64;
            assert!(((mean - x) / x).abs() < 0.02, "mean {mean} vs {x}");
        }
    }

    #[test]
    fn backward_simple() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1., 2., 3.]));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1., 1., 1.]);
        // repeated calls accumulate
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2., 2., 2.]);

        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[6.0]);
        assert!(t.backward(x).is_ok());
        let v = t.param(Tensor::vector(vec![1., 2.]));
        assert!(t.backward(v).is_err());
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[4, 2]);
        let w = rand_tensor(&mut rng, &[3, 2]);
        assert_grads_match(&[a, b], 1e-6, |t, v| {
            let c = t.matmul(v[0], v[1])?;
            let wv = t.constant(w.clone());
            let p = t.mul(c, wv)?;
            Ok(t.sum(p))
        });
    }

    #[test]
    fn op_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_tensor(&mut rng, &[5, 3]);
        let y = rand_tensor(&mut rng, &[5, 3]);
        let bias = rand_tensor(&mut rng, &[3]);
        let s = rand_tensor(&mut rng, &[]);
        let w = rand_tensor(&mut rng, &[15]).into_data();
        let ids = [0usize, 2, 0, 1, 2];
        assert_grads_match(&[x, y, bias, s], 1e-4, |t, v| {
            let a = t.add(v[0], v[1])?;
            let b = t.mul(a, v[1])?;
            let c = t.sub(b, v[0])?;
            let c = t.add_bias(c, v[2])?;
            let c = t.mul(v[3], c)?;
            let l = t.leaky_relu(c, 0.2);
            let sg = t.sigmoid(v[0]);
            let cc = t.concat_cols(&[l, sg])?;
            let g = t.gather_rows(cc, &[4, 0, 0, 2])?;
            let sr = t.segment_reduce(v[1], &ids, 3, ReduceMode::Mean)?;
            let sm = t.segment_reduce(v[0], &ids, 4, ReduceMode::Max)?;
            let ss = t.segment_reduce(v[0], &ids, 3, ReduceMode::Sum)?;
            let rows = t.concat_rows(&[sr, sm, ss])?;
            let rows = t.reshape(rows, &[10, 3])?;
            let wv = t.mul_const(v[0], w.clone())?;
            let col = t.gather_rows(v[2], &[0, 1, 2, 0, 1])?;
            let sc = t.scale_rows(v[1], col)?;
            let parts = [t.sum(g), t.sum(rows), t.sum(wv), t.sum(sc)];
            let mut acc = parts[0];
            for p in &parts[1..] {
                acc = t.add(acc, *p)?;
            }
            let sq = t.mul(acc, acc)?;
            Ok(t.scale(sq, 0.1))
        });
    }

    #[test]
    fn softmax_and_kl_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let logits = rand_tensor(&mut rng, &[3, 4]);
        let scores = rand_tensor(&mut rng, &[6]);
        let mask = [true, true, false, true, false, true, true, true, true, false, false, true];
        let target = [0.2, 0.8, 0.0, 0.0, 0.0, 0.5, 0.25, 0.25, 1.0, 0.0, 0.0, 0.0];
        let weight = [1.0; 12];
        let coef = rand_tensor(&mut rng, &[6]).into_data();
        assert_grads_match(&[logits, scores], 1e-4, |t, v| {
            let p = t.masked_softmax(v[0], &mask)?;
            let kl = t.masked_kl(p, &target, &weight)?;
            let a = t.segment_softmax(v[1], &[0, 0, 1, 2, 2, 2], 3)?;
            let a = t.mul_const(a, coef.clone())?;
            let sa = t.sum(a);
            t.add(kl, sa)
        });
    }

    #[test]
    fn graph_norm_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = rand_tensor(&mut rng, &[6, 3]);
        let g = rand_tensor(&mut rng, &[3]);
        let b = rand_tensor(&mut rng, &[3]);
        let a = rand_tensor(&mut rng, &[3]);
        let w = rand_tensor(&mut rng, &[18]).into_data();
        assert_grads_match(&[h, g, b, a], 1e-4, |t, v| {
            let y = t.graph_norm(v[0], v[1], v[2], v[3], 1e-5)?;
            let y = t.mul_const(y, w.clone())?;
            let y = t.mul(y, y)?;
            Ok(t.sum(y))
        });
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let mut t = Tape::new();
            let x = t.param(rand_tensor(&mut rng, &[4, 4]));
            let y = t.matmul(x, x).unwrap();
            let y = t.dropout(y, 0.3, true, &mut rng).unwrap();
            let s = t.sum(y);
            t.backward(s).unwrap();
            (t.value(s).data().to_vec(), t.grad(x).unwrap().to_vec())
        };
        let (a, b) = (run(), run());
        assert_eq!(a.0[0].to_bits(), b.0[0].to_bits());
        assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
