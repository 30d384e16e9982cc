//! The heterogeneous POI/CBG network: CBG encoder, POI encoder with
//! relation-wise attention and a gated residual, cross-type fusion and a
//! candidate-constrained pairwise scorer.

pub mod checkpoint;
pub mod config;
pub mod head;
pub mod inputs;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::CandidateTable;
use crate::layers::{join, AttentionForm, Bound, EdgeIndex, Gate, Gatv2, GraphNorm, Linear, Params, Sage};
use crate::tensor::{Tape, Tensor, Var};
pub use checkpoint::Checkpoint;
pub use config::{CrossEdgeMode, ModelConfig, PpRelation};
pub use head::{PairHead, Scored};
pub use inputs::{EdgeSet, GraphInputs};

/// Anything that maps graph inputs to candidate probabilities.
pub trait Scorer {
    fn name(&self) -> &'static str;

    fn init_params(&self, seed: u64) -> Params;

    /// Masked-softmax probabilities for `rows` (`rows.len() x K`).
    fn forward(
        &self,
        t: &mut Tape,
        b: &Bound,
        inputs: &GraphInputs,
        cands: &CandidateTable,
        rows: &[usize],
        training: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Var>;

    /// Eval-mode probabilities for every row of `cands`, row-major.
    fn predict(&self, params: &Params, inputs: &GraphInputs, cands: &CandidateTable) -> Result<Vec<f64>> {
        let mut t = Tape::new();
        let b = params.bind(&mut t);
        let rows: Vec<usize> = (0..cands.n_rows()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = self.forward(&mut t, &b, inputs, cands, &rows, false, &mut rng)?;
        Ok(t.value(p).data().to_vec())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct PpBranch {
    rel: PpRelation,
    phi: Option<Linear>,
    gat: Gatv2,
}

#[derive(Clone, Debug, PartialEq)]
struct CrossSide {
    sage: Option<Sage>,
    gat: Option<Gatv2>,
    fallback: Linear,
    norm: Option<GraphNorm>,
}

/// Dimensions of the inputs a model was built for.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InputDims {
    pub poi_in: usize,
    pub cbg_in: usize,
    pub pp_attr: Vec<(PpRelation, usize)>,
}

impl InputDims {
    pub fn of(inputs: &GraphInputs) -> Self {
        InputDims {
            poi_in: inputs.poi_x.cols(),
            cbg_in: inputs.cbg_x.cols(),
            pp_attr: PpRelation::ALL
                .iter()
                .map(|&r| (r, inputs.pp(r.kind()).attr_dim()))
                .collect(),
        }
    }

    fn attr(&self, r: PpRelation) -> usize {
        self.pp_attr.iter().find(|(k, _)| *k == r).map_or(0, |x| x.1)
    }
}

/// Embeddings and probabilities from one forward pass.
pub struct Forward {
    pub z_poi: Var,
    pub z_cbg: Var,
    pub probs: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisitHgnn {
    pub config: ModelConfig,
    pub dims: InputDims,
    cbg_proj: Linear,
    cbg_sage: Vec<Sage>,
    cbg_norm: Vec<Option<GraphNorm>>,
    poi_l1: Linear,
    poi_l2: Linear,
    poi_norm0: Option<GraphNorm>,
    pp: Vec<PpBranch>,
    gate: Gate,
    poi_norm1: Option<GraphNorm>,
    poi_side: CrossSide,
    cbg_side: CrossSide,
    head: PairHead,
}

impl VisitHgnn {
    pub fn new(config: ModelConfig, dims: InputDims) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let cbg_sage = (0..2)
            .map(|l| Sage::new(&format!("cbg.sage{l}"), c.d_cbg, c.d_cbg, c.d_cbg))
            .collect::<Result<Vec<_>>>()?;
        let gn = |path: String, d: usize| c.use_graphnorm.then(|| GraphNorm::new(path, d));
        let cbg_norm = (0..2).map(|l| gn(format!("cbg.norm{l}"), c.d_cbg)).collect();
        let pp = c
            .enabled_pp_relations
            .iter()
            .map(|&rel| {
                let d_attr = dims.attr(rel);
                let path = format!("poi.rel.{}", rel.name());
                PpBranch {
                    rel,
                    phi: (d_attr > 0).then(|| Linear::new(join(&path, "phi"), d_attr, c.d_e, true)),
                    gat: Gatv2::new(
                        &join(&path, "gat"),
                        c.d_poi,
                        c.d_poi,
                        if d_attr > 0 { c.d_e } else { 0 },
                        c.d_poi,
                        c.d_poi,
                        AttentionForm::Outer,
                    ),
                }
            })
            .collect();
        let mode = c.cross_edge_mode;
        let d_dist = mode.knn_distance() as usize;
        let side = |name: &str, d_self: usize, d_other: usize| -> Result<CrossSide> {
            Ok(CrossSide {
                sage: match mode.uses_belong() {
                    true => Some(Sage::new(&format!("fuse.{name}.belong"), d_self, d_other, c.d_hid)?),
                    false => None,
                },
                gat: mode.uses_knn().then(|| {
                    Gatv2::new(
                        &format!("fuse.{name}.knn"),
                        d_other,
                        d_self,
                        d_dist,
                        c.d_hid,
                        c.d_hid,
                        AttentionForm::Inner,
                    )
                }),
                fallback: Linear::new(format!("fuse.{name}.fallback"), d_self, c.d_hid, true),
                norm: gn(format!("fuse.{name}.norm"), c.d_hid),
            })
        };
        Ok(VisitHgnn {
            cbg_proj: Linear::new("cbg.proj", dims.cbg_in, c.d_cbg, false),
            cbg_sage,
            cbg_norm,
            poi_l1: Linear::new("poi.mlp1", dims.poi_in, c.d_poi, true),
            poi_l2: Linear::new("poi.mlp2", c.d_poi, c.d_poi, true),
            poi_norm0: gn("poi.norm0".into(), c.d_poi),
            pp,
            gate: Gate::new("poi.gate"),
            poi_norm1: gn("poi.norm1".into(), c.d_poi),
            poi_side: side("poi", c.d_poi, c.d_cbg)?,
            cbg_side: side("cbg", c.d_cbg, c.d_poi)?,
            head: PairHead::new("head", c.d_hid, c.d_hid, &c.head_widths, c.dropout),
            dims,
            config,
        })
    }

    fn norm(&self, t: &mut Tape, b: &Bound, n: &Option<GraphNorm>, h: Var) -> Result<Var> {
        match n {
            Some(n) => n.forward(t, b, h),
            None => Ok(h),
        }
    }

    pub fn encode_cbg(&self, t: &mut Tape, b: &Bound, inputs: &GraphInputs, training: bool, rng: &mut dyn RngCore) -> Result<Var> {
        let x = t.constant(inputs.cbg_x.clone());
        let mut h = self.cbg_proj.forward(t, b, x)?;
        let none = EdgeSet::empty();
        let adj = if self.config.use_cbg_adjacency { &inputs.cbg_adj } else { &none };
        let e = EdgeIndex {
            src: &adj.src,
            dst: &adj.dst,
            n_dst: inputs.n_cbg(),
        };
        for (sage, norm) in self.cbg_sage.iter().zip(&self.cbg_norm) {
            let s = sage.forward(t, b, h, h, e)?;
            let s = self.norm(t, b, norm, s)?;
            let s = t.dropout(s, self.config.dropout, training, rng)?;
            h = t.add(h, s)?;
        }
        Ok(h)
    }

    pub fn encode_poi(&self, t: &mut Tape, b: &Bound, inputs: &GraphInputs, training: bool, rng: &mut dyn RngCore) -> Result<Var> {
        let n = inputs.n_poi();
        let x = t.constant(inputs.poi_x.clone());
        let h = self.poi_l1.forward(t, b, x)?;
        let h = t.relu(h);
        let h = self.poi_l2.forward(t, b, h)?;
        let h = self.norm(t, b, &self.poi_norm0, h)?;
        let h = t.relu(h);
        let h0 = t.dropout(h, self.config.dropout, training, rng)?;

        let mut messages = Vec::with_capacity(self.pp.len());
        for br in &self.pp {
            let es = inputs.pp(br.rel.kind());
            let attrs = match (&br.phi, &es.attrs) {
                (Some(phi), Some(a)) => {
                    let a = t.constant(a.clone());
                    let a = phi.forward(t, b, a)?;
                    Some(t.relu(a))
                }
                _ => None,
            };
            let e = EdgeIndex {
                src: &es.src,
                dst: &es.dst,
                n_dst: n,
            };
            messages.push(br.gat.forward(t, b, h0, h0, e, attrs)?.out);
        }
        let z = match messages.len() {
            0 => t.constant(Tensor::zeros(&[n, self.config.d_poi])),
            1 => messages[0],
            r => {
                let stacked = t.concat_rows(&messages)?;
                let ids: Vec<usize> = (0..r).flat_map(|_| 0..n).collect();
                t.segment_reduce(stacked, &ids, n, self.config.agg_pp)?
            }
        };
        let h1 = self.gate.forward(t, b, h0, z)?;
        let h1 = self.norm(t, b, &self.poi_norm1, h1)?;
        let h1 = t.relu(h1);
        t.dropout(h1, self.config.dropout, training, rng)
    }

    /// One side of cross-type fusion: `h_self` receives from `h_other`.
    fn fuse_side(
        &self,
        t: &mut Tape,
        b: &Bound,
        side: &CrossSide,
        h_self: Var,
        h_other: Var,
        belong: (&[usize], &[usize]),
        knn: (&[usize], &[usize], Option<&Tensor>),
    ) -> Result<Var> {
        let mode = self.config.cross_edge_mode;
        let n = t.value(h_self).rows();
        let mut received = vec![false; n];
        let mut acc: Option<Var> = None;
        if let (Some(sage), false) = (&side.sage, belong.0.is_empty()) {
            let e = EdgeIndex {
                src: belong.0,
                dst: belong.1,
                n_dst: n,
            };
            acc = Some(sage.edge_kernel(t, b, h_self, h_other, e)?);
            belong.1.iter().for_each(|&d| received[d] = true);
        }
        if let (Some(gat), false) = (&side.gat, knn.0.is_empty()) {
            let e = EdgeIndex {
                src: knn.0,
                dst: knn.1,
                n_dst: n,
            };
            let attrs = match (mode.knn_distance(), knn.2) {
                (true, Some(d)) => Some(t.constant(d.clone())),
                (true, None) => Some(t.constant(Tensor::zeros(&[knn.0.len(), 1]))),
                _ => None,
            };
            let m = gat.forward(t, b, h_other, h_self, e, attrs)?.out;
            acc = Some(match acc {
                Some(a) => t.add(a, m)?,
                None => m,
            });
            knn.1.iter().for_each(|&d| received[d] = true);
        }
        let iso: Vec<f64> = received.iter().map(|&r| if r { 0.0 } else { 1.0 }).collect();
        let z = if iso.iter().any(|&v| v > 0.0) {
            let fb = side.fallback.forward(t, b, h_self)?;
            let width = self.config.d_hid;
            let m: Vec<f64> = iso.iter().flat_map(|&v| std::iter::repeat(v).take(width)).collect();
            let fb = t.mul_const(fb, m)?;
            match acc {
                Some(a) => t.add(a, fb)?,
                None => fb,
            }
        } else {
            acc.expect("every node received a message")
        };
        self.norm(t, b, &side.norm, z)
    }

    /// Cross-type fusion into `(z_poi, z_cbg)`.
    pub fn fuse(&self, t: &mut Tape, b: &Bound, inputs: &GraphInputs, h_poi: Var, h_cbg: Var) -> Result<(Var, Var)> {
        let (bl, kn) = (&inputs.belong, &inputs.knn);
        let z_poi = self.fuse_side(
            t,
            b,
            &self.poi_side,
            h_poi,
            h_cbg,
            (&bl.dst, &bl.src),
            (&kn.dst, &kn.src, kn.attrs.as_ref()),
        )?;
        let z_cbg = self.fuse_side(
            t,
            b,
            &self.cbg_side,
            h_cbg,
            h_poi,
            (&bl.src, &bl.dst),
            (&kn.src, &kn.dst, kn.attrs.as_ref()),
        )?;
        Ok((z_poi, z_cbg))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn run(
        &self,
        t: &mut Tape,
        b: &Bound,
        inputs: &GraphInputs,
        cands: &CandidateTable,
        rows: &[usize],
        training: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Forward> {
        let h_cbg = self.encode_cbg(t, b, inputs, training, rng)?;
        let h_poi = self.encode_poi(t, b, inputs, training, rng)?;
        let (z_poi, z_cbg) = self.fuse(t, b, inputs, h_poi, h_cbg)?;
        let s = self.head.forward(t, b, z_cbg, z_poi, cands, rows, training, rng)?;
        let probs = t.masked_softmax(s.logits, &s.mask)?;
        Ok(Forward { z_poi, z_cbg, probs })
    }

    /// All parameter paths, in order.
    pub fn parameter_paths(&self) -> Vec<String> {
        self.init_params(0).iter().map(|(k, _)| k.clone()).collect()
    }
}

impl Scorer for VisitHgnn {
    fn name(&self) -> &'static str {
        "visithgnn"
    }

    fn init_params(&self, seed: u64) -> Params {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        self.cbg_proj.init(&mut p, &mut rng);
        for (s, n) in self.cbg_sage.iter().zip(&self.cbg_norm) {
            s.init(&mut p, &mut rng);
            if let Some(n) = n {
                n.init(&mut p);
            }
        }
        self.poi_l1.init(&mut p, &mut rng);
        self.poi_l2.init(&mut p, &mut rng);
        if let Some(n) = &self.poi_norm0 {
            n.init(&mut p);
        }
        for br in &self.pp {
            if let Some(phi) = &br.phi {
                phi.init(&mut p, &mut rng);
            }
            br.gat.init(&mut p, &mut rng);
        }
        self.gate.init(&mut p);
        if let Some(n) = &self.poi_norm1 {
            n.init(&mut p);
        }
        for side in [&self.poi_side, &self.cbg_side] {
            if let Some(s) = &side.sage {
                s.init(&mut p, &mut rng);
            }
            if let Some(g) = &side.gat {
                g.init(&mut p, &mut rng);
            }
            side.fallback.init(&mut p, &mut rng);
            if let Some(n) = &side.norm {
                n.init(&mut p);
            }
        }
        self.head.init(&mut p, &mut rng);
        p
    }

    fn forward(
        &self,
        t: &mut Tape,
        b: &Bound,
        inputs: &GraphInputs,
        cands: &CandidateTable,
        rows: &[usize],
        training: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        Ok(self.run(t, b, inputs, cands, rows, training, rng)?.probs)
    }
}

/// Feature-only pairwise scorer: the same head over raw normalized rows.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseMlp {
    pub head: PairHead,
}

impl PairwiseMlp {
    pub fn new(d_cbg_in: usize, d_poi_in: usize, widths: &[usize], dropout: f64) -> Self {
        PairwiseMlp {
            head: PairHead::new("mlp", d_cbg_in, d_poi_in, widths, dropout),
        }
    }
}

impl Scorer for PairwiseMlp {
    fn name(&self) -> &'static str {
        "mlp"
    }

    fn init_params(&self, seed: u64) -> Params {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        self.head.init(&mut p, &mut rng);
        p
    }

    fn forward(
        &self,
        t: &mut Tape,
        b: &Bound,
        inputs: &GraphInputs,
        cands: &CandidateTable,
        rows: &[usize],
        training: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        let c = t.constant(inputs.cbg_x.clone());
        let p = t.constant(inputs.poi_x.clone());
        let s = self.head.forward(t, b, c, p, cands, rows, training, rng)?;
        t.masked_softmax(s.logits, &s.mask)
    }
}

/// Draws a seed for a derived random stream.
pub fn sub_seed(rng: &mut impl Rng) -> u64 {
    rng.gen()
}

#[cfg(test)]
mod tests;
