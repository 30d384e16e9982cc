use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::CandidateTable;
use crate::layers::{glorot, join, Bound, Linear, Params};
use crate::tensor::{Tape, Tensor, Var};

/// Shared feed-forward scorer over `z_cbg || z_poi` pairs.
///
/// The first layer is stored as separate CBG and POI blocks so each node is
/// projected once and pairs are formed by gathering; this equals applying
/// the concatenated weight to every pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairHead {
    pub path: String,
    pub d_cbg: usize,
    pub d_poi: usize,
    pub widths: Vec<usize>,
    pub dropout: f64,
    rest: Vec<Linear>,
}

/// Candidate rows selected for one scoring pass.
pub struct Scored {
    /// `rows.len() x K`, padded slots are exactly 0.
    pub logits: Var,
    pub mask: Vec<bool>,
}

impl PairHead {
    pub fn new(path: &str, d_cbg: usize, d_poi: usize, widths: &[usize], dropout: f64) -> Self {
        let rest = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(join(path, &format!("l{}", i + 1)), w[0], w[1], true))
            .collect();
        PairHead {
            path: path.to_string(),
            d_cbg,
            d_poi,
            widths: widths.to_vec(),
            dropout,
            rest,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut Params, rng: &mut R) {
        let w0 = self.widths[0];
        let fan_in = self.d_cbg + self.d_poi;
        p.insert(join(&self.path, "l0.w_cbg"), glorot(rng, fan_in, w0, &[self.d_cbg, w0]));
        p.insert(join(&self.path, "l0.w_poi"), glorot(rng, fan_in, w0, &[self.d_poi, w0]));
        p.insert(join(&self.path, "l0.b"), Tensor::zeros(&[w0]));
        for l in &self.rest {
            l.init(p, rng);
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward<R: Rng + ?Sized>(
        &self,
        t: &mut Tape,
        b: &Bound,
        z_cbg: Var,
        z_poi: Var,
        cands: &CandidateTable,
        rows: &[usize],
        training: bool,
        rng: &mut R,
    ) -> Result<Scored> {
        let k = cands.k;
        let n_cbg = t.value(z_cbg).rows();
        if rows.is_empty() {
            return Err(Error::param("rows", "nothing to score"));
        }
        let mut idx_c = Vec::with_capacity(rows.len() * k);
        let mut idx_p = Vec::with_capacity(rows.len() * k);
        let mut mask = Vec::with_capacity(rows.len() * k);
        for &r in rows {
            if r >= cands.n_rows() {
                return Err(Error::Index {
                    what: "candidate row",
                    index: r,
                    len: cands.n_rows(),
                });
            }
            if cands.valid_count(r) == 0 {
                return Err(Error::DegenerateCandidates(r.to_string()));
            }
            for (&c, &m) in cands.row_cbg(r).iter().zip(cands.row_mask(r)) {
                if m && c >= n_cbg {
                    return Err(Error::Index {
                        what: "candidate cbg",
                        index: c,
                        len: n_cbg,
                    });
                }
                idx_c.push(if m { c } else { 0 });
                idx_p.push(r);
                mask.push(m);
            }
        }
        let a = t.matmul(z_cbg, b.var(&join(&self.path, "l0.w_cbg"))?)?;
        let p = t.matmul(z_poi, b.var(&join(&self.path, "l0.w_poi"))?)?;
        let ga = t.gather_rows(a, &idx_c)?;
        let gp = t.gather_rows(p, &idx_p)?;
        let h = t.add(ga, gp)?;
        let mut h = t.add_bias(h, b.var(&join(&self.path, "l0.b"))?)?;
        for l in &self.rest {
            h = t.relu(h);
            h = t.dropout(h, self.dropout, training, rng)?;
            h = l.forward(t, b, h)?;
        }
        let h = t.reshape(h, &[rows.len(), k])?;
        let keep = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        let logits = t.mul_const(h, keep)?;
        Ok(Scored { logits, mask })
    }
}
