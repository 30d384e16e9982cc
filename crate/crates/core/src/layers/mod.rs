//! Reusable graph layers over the autodiff tape.
//!
//! Layers only describe shapes and parameter paths; the values live in a
//! [`Params`] store and are bound to a tape for each forward pass.

pub mod gradcheck;
pub mod params;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{ReduceMode, Tape, Tensor, Var};
pub use params::{glorot, join, Bound, Params};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const GRAPHNORM_EPS: f64 = 1e-5;

/// Edge list of a (possibly bipartite) relation, messages flow `src -> dst`.
#[derive(Clone, Copy, Debug)]
pub struct EdgeIndex<'a> {
    pub src: &'a [usize],
    pub dst: &'a [usize],
    pub n_dst: usize,
}

impl EdgeIndex<'_> {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub path: String,
    pub d_in: usize,
    pub d_out: usize,
    pub bias: bool,
}

impl Linear {
    pub fn new(path: impl Into<String>, d_in: usize, d_out: usize, bias: bool) -> Self {
        Linear {
            path: path.into(),
            d_in,
            d_out,
            bias,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut Params, rng: &mut R) {
        p.insert(join(&self.path, "w"), glorot(rng, self.d_in, self.d_out, &[self.d_in, self.d_out]));
        if self.bias {
            p.insert(join(&self.path, "b"), Tensor::zeros(&[self.d_out]));
        }
    }

    pub fn forward(&self, t: &mut Tape, b: &Bound, x: Var) -> Result<Var> {
        let y = t.matmul(x, b.var(&join(&self.path, "w"))?)?;
        if self.bias {
            t.add_bias(y, b.var(&join(&self.path, "b"))?)
        } else {
            Ok(y)
        }
    }
}

/// Feature-wise normalization across the node batch with learnable scale,
/// shift and mean-subtraction weight.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphNorm {
    pub path: String,
    pub d: usize,
}

impl GraphNorm {
    pub fn new(path: impl Into<String>, d: usize) -> Self {
        GraphNorm { path: path.into(), d }
    }

    pub fn init(&self, p: &mut Params) {
        p.insert(join(&self.path, "gamma"), Tensor::filled(&[self.d], 1.0));
        p.insert(join(&self.path, "beta"), Tensor::zeros(&[self.d]));
        p.insert(join(&self.path, "alpha"), Tensor::filled(&[self.d], 1.0));
    }

    pub fn forward(&self, t: &mut Tape, b: &Bound, h: Var) -> Result<Var> {
        t.graph_norm(
            h,
            b.var(&join(&self.path, "gamma"))?,
            b.var(&join(&self.path, "beta"))?,
            b.var(&join(&self.path, "alpha"))?,
            GRAPHNORM_EPS,
        )
    }
}

/// GraphSAGE convolution: `relu(W_self h_v || mean_{u in N(v)} W_nbr h_u)`.
/// Each half has width `d_out / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sage {
    pub w_self: Linear,
    pub w_nbr: Linear,
}

impl Sage {
    pub fn new(path: &str, d_dst: usize, d_src: usize, d_out: usize) -> Result<Self> {
        if d_out % 2 != 0 || d_out == 0 {
            return Err(Error::param("sage d_out", format!("{d_out} must be a positive even width")));
        }
        Ok(Sage {
            w_self: Linear::new(join(path, "self"), d_dst, d_out / 2, true),
            w_nbr: Linear::new(join(path, "nbr"), d_src, d_out / 2, true),
        })
    }

    pub fn d_out(&self) -> usize {
        self.w_self.d_out + self.w_nbr.d_out
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut Params, rng: &mut R) {
        self.w_self.init(p, rng);
        self.w_nbr.init(p, rng);
    }

    fn check(&self, t: &Tape, h_dst: Var, h_src: Var, e: EdgeIndex<'_>) -> Result<()> {
        if t.value(h_dst).cols() != self.w_self.d_in || t.value(h_src).cols() != self.w_nbr.d_in {
            return Err(Error::dim("sage", t.shape(h_dst), &[self.w_self.d_in]));
        }
        if t.value(h_dst).rows() != e.n_dst || e.src.len() != e.dst.len() {
            return Err(Error::dim("sage", t.shape(h_dst), &[e.n_dst]));
        }
        Ok(())
    }

    /// Mean aggregation over in-neighbors, then `relu` after concatenation.
    /// Nodes without neighbors get a zero neighbor half.
    pub fn forward(&self, t: &mut Tape, b: &Bound, h_dst: Var, h_src: Var, e: EdgeIndex<'_>) -> Result<Var> {
        self.check(t, h_dst, h_src, e)?;
        let s = self.w_self.forward(t, b, h_dst)?;
        let n = self.w_nbr.forward(t, b, h_src)?;
        let per_edge = t.gather_rows(n, e.src)?;
        let m = t.segment_reduce(per_edge, e.dst, e.n_dst, ReduceMode::Mean)?;
        let c = t.concat_cols(&[s, m])?;
        Ok(t.relu(c))
    }

    /// Per-edge kernel `relu(W_self h_v || W_nbr h_u)` summed over each target's edges.
    pub fn edge_kernel(&self, t: &mut Tape, b: &Bound, h_dst: Var, h_src: Var, e: EdgeIndex<'_>) -> Result<Var> {
        self.check(t, h_dst, h_src, e)?;
        let s = self.w_self.forward(t, b, h_dst)?;
        let n = self.w_nbr.forward(t, b, h_src)?;
        let se = t.gather_rows(s, e.dst)?;
        let ne = t.gather_rows(n, e.src)?;
        let c = t.concat_cols(&[se, ne])?;
        let r = t.relu(c);
        t.segment_reduce(r, e.dst, e.n_dst, ReduceMode::Sum)
    }
}

/// Where the attention nonlinearity sits relative to the score projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionForm {
    /// `leaky(a^T [W_s h_u || W_t h_v || U e])`
    Outer,
    /// `a^T leaky([W_s h_u || W_t h_v || U e])`
    Inner,
}

/// Single-head edge-conditioned attention with scores normalized per target
/// and messages `sum_u alpha_uv M h_u`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gatv2 {
    pub path: String,
    pub w_s: Linear,
    pub w_t: Linear,
    /// Absent for attribute-free relations.
    pub u: Option<Linear>,
    pub m: Linear,
    pub d_att: usize,
    pub form: AttentionForm,
}

pub struct Attention {
    pub out: Var,
    /// Per-edge weights, summing to 1 over each target with at least one edge.
    pub weights: Var,
}

impl Gatv2 {
    pub fn new(path: &str, d_src: usize, d_dst: usize, d_edge: usize, d_att: usize, d_out: usize, form: AttentionForm) -> Self {
        Gatv2 {
            path: path.to_string(),
            w_s: Linear::new(join(path, "w_s"), d_src, d_att, false),
            w_t: Linear::new(join(path, "w_t"), d_dst, d_att, false),
            u: (d_edge > 0).then(|| Linear::new(join(path, "u"), d_edge, d_att, false)),
            m: Linear::new(join(path, "m"), d_src, d_out, false),
            d_att,
            form,
        }
    }

    fn blocks(&self) -> usize {
        2 + self.u.is_some() as usize
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut Params, rng: &mut R) {
        self.w_s.init(p, rng);
        self.w_t.init(p, rng);
        if let Some(u) = &self.u {
            u.init(p, rng);
        }
        self.m.init(p, rng);
        let w = self.blocks() * self.d_att;
        p.insert(join(&self.path, "a"), glorot(rng, w, 1, &[w, 1]));
    }

    pub fn forward(
        &self,
        t: &mut Tape,
        b: &Bound,
        h_src: Var,
        h_dst: Var,
        e: EdgeIndex<'_>,
        attrs: Option<Var>,
    ) -> Result<Attention> {
        if t.value(h_src).cols() != self.w_s.d_in || t.value(h_dst).cols() != self.w_t.d_in {
            return Err(Error::dim("gatv2", t.shape(h_src), &[self.w_s.d_in]));
        }
        if t.value(h_dst).rows() != e.n_dst || e.src.len() != e.dst.len() {
            return Err(Error::dim("gatv2", t.shape(h_dst), &[e.n_dst]));
        }
        let ps = self.w_s.forward(t, b, h_src)?;
        let pt = self.w_t.forward(t, b, h_dst)?;
        let mut parts = vec![t.gather_rows(ps, e.src)?, t.gather_rows(pt, e.dst)?];
        match (&self.u, attrs) {
            (Some(u), Some(a)) => {
                if t.value(a).rows() != e.len() {
                    return Err(Error::dim("gatv2 attrs", t.shape(a), &[e.len()]));
                }
                parts.push(u.forward(t, b, a)?);
            }
            (None, None) => {}
            _ => return Err(Error::validation(format!("{}: edge attributes do not match layer", self.path))),
        }
        let z = t.concat_cols(&parts)?;
        let a = b.var(&join(&self.path, "a"))?;
        let scores = match self.form {
            AttentionForm::Outer => {
                let s = t.matmul(z, a)?;
                t.leaky_relu(s, LEAKY_SLOPE)
            }
            AttentionForm::Inner => {
                let zl = t.leaky_relu(z, LEAKY_SLOPE);
                t.matmul(zl, a)?
            }
        };
        let scores = t.reshape(scores, &[e.len()])?;
        let weights = t.segment_softmax(scores, e.dst, e.n_dst)?;
        let msg = self.m.forward(t, b, h_src)?;
        let msg = t.gather_rows(msg, e.src)?;
        let msg = t.scale_rows(msg, weights)?;
        let out = t.segment_reduce(msg, e.dst, e.n_dst, ReduceMode::Sum)?;
        Ok(Attention { out, weights })
    }
}

/// Global scalar gate: `(1 - sigmoid(g)) * base + sigmoid(g) * update`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    pub path: String,
}

impl Gate {
    pub fn new(path: impl Into<String>) -> Self {
        Gate { path: path.into() }
    }

    pub fn init(&self, p: &mut Params) {
        p.insert(join(&self.path, "gamma"), Tensor::vector(vec![0.0]));
    }

    pub fn forward(&self, t: &mut Tape, b: &Bound, base: Var, update: Var) -> Result<Var> {
        if t.shape(base) != t.shape(update) {
            return Err(Error::dim("gated_combine", t.shape(base), t.shape(update)));
        }
        let g = b.var(&join(&self.path, "gamma"))?;
        let alpha = t.sigmoid(g);
        let diff = t.sub(update, base)?;
        let step = t.mul(alpha, diff)?;
        t.add(base, step)
    }
}
