//! Distribution and ranking metrics over masked candidate rows.
//!
//! Ranks come from predicted probabilities in descending order with ties
//! broken by the lower candidate index.

pub mod plots;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CandidateTable;

pub const KL_EPS: f64 = 1e-9;
pub const NDCG_KS: [usize; 4] = [5, 10, 20, 50];
pub const RECALL_KS: [usize; 3] = [5, 10, 15];
pub const HIST_BINS: usize = 50;

/// One POI's prediction against its target over a masked candidate row.
#[derive(Clone, Copy, Debug)]
pub struct EvalRow<'a> {
    pub t: &'a [f64],
    pub p: &'a [f64],
    pub mask: &'a [bool],
}

impl<'a> EvalRow<'a> {
    pub fn new(t: &'a [f64], p: &'a [f64], mask: &'a [bool]) -> Result<Self> {
        if t.len() != p.len() || t.len() != mask.len() {
            return Err(Error::dim("eval row", &[t.len(), p.len()], &[mask.len()]));
        }
        Ok(EvalRow { t, p, mask })
    }

    fn valid(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.t.len()).filter(|&j| self.mask[j])
    }

    pub fn n_valid(&self) -> usize {
        self.valid().count()
    }

    /// Valid indices ordered by predicted probability, highest first.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self.valid().collect();
        idx.sort_by(|&a, &b| self.p[b].total_cmp(&self.p[a]).then(a.cmp(&b)));
        idx
    }

    pub fn target_mass(&self) -> f64 {
        self.valid().map(|j| self.t[j]).sum()
    }
}

pub fn kl_row(r: &EvalRow, eps: f64) -> f64 {
    r.valid()
        .filter(|&j| r.t[j] > 0.0)
        .map(|j| r.t[j] * ((r.t[j] + eps) / (r.p[j] + eps)).ln())
        .sum()
}

pub fn mae_row(r: &EvalRow) -> Result<f64> {
    let n = r.n_valid();
    if n == 0 {
        return Err(Error::DegenerateMask);
    }
    Ok(r.valid().map(|j| (r.p[j] - r.t[j]).abs()).sum::<f64>() / n as f64)
}

/// 1 when the predicted argmax is one of the target's maximizers.
pub fn top1_row(r: &EvalRow) -> Result<f64> {
    let best = *r.ranking().first().ok_or(Error::DegenerateMask)?;
    let t_max = r.valid().map(|j| r.t[j]).fold(f64::NEG_INFINITY, f64::max);
    Ok(if r.t[best] == t_max { 1.0 } else { 0.0 })
}

fn dcg(gains: impl Iterator<Item = f64>) -> f64 {
    gains
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum()
}

/// `None` when the ideal gain is zero.
pub fn ndcg_row(r: &EvalRow, k: usize) -> Result<Option<f64>> {
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    let mut ideal: Vec<f64> = r.valid().map(|j| r.t[j]).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let z = dcg(ideal.into_iter().take(k));
    if z <= 0.0 {
        return Ok(None);
    }
    Ok(Some(dcg(r.ranking().into_iter().take(k).map(|j| r.t[j])) / z))
}

/// Share of target mass inside the predicted top-k; `None` for zero-mass rows.
pub fn recall_row(r: &EvalRow, k: usize) -> Option<f64> {
    let total = r.target_mass();
    if total <= 0.0 {
        return None;
    }
    Some(r.ranking().into_iter().take(k).map(|j| r.t[j]).sum::<f64>() / total)
}

/// Coefficient of determination over all valid pairs against the global mean target.
pub fn r2_global<'a>(rows: impl IntoIterator<Item = &'a EvalRow<'a>> + Clone) -> Result<f64> {
    let (mut n, mut sum) = (0usize, 0.0);
    for r in rows.clone() {
        for j in r.valid() {
            n += 1;
            sum += r.t[j];
        }
    }
    if n < 2 {
        return Err(Error::param("pairs", "need at least two valid pairs"));
    }
    let mean = sum / n as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for r in rows {
        for j in r.valid() {
            ss_res += (r.t[j] - r.p[j]).powi(2);
            ss_tot += (r.t[j] - mean).powi(2);
        }
    }
    if ss_tot == 0.0 {
        return Err(Error::UndefinedR2);
    }
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoiMetrics {
    pub row: usize,
    pub kl: f64,
    pub mae: f64,
    pub top1: f64,
    pub ndcg_50: Option<f64>,
    pub recall: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub split: String,
    pub k: usize,
    pub n_rows: usize,
    /// Rows without target mass, left out of every mean.
    pub n_unlabeled: usize,
    pub kl: f64,
    pub mae: f64,
    pub top1: f64,
    pub ndcg: BTreeMap<String, f64>,
    /// Rows whose ideal gain was zero at each cut-off.
    pub ndcg_excluded: usize,
    pub recall: BTreeMap<String, f64>,
    pub r2: Option<f64>,
    pub mean_captured_mass: f64,
    pub kl_histogram: Vec<HistBin>,
    #[serde(skip)]
    pub per_poi: Vec<PoiMetrics>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// 50 uniform bins over `[0, max]`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistBin> {
    let hi = values.iter().copied().fold(0.0, f64::max);
    let width = if hi > 0.0 { hi / bins as f64 } else { 1.0 / bins as f64 };
    let mut out: Vec<HistBin> = (0..bins)
        .map(|i| HistBin {
            lo: i as f64 * width,
            hi: (i + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for &v in values {
        let i = ((v.max(0.0) / width) as usize).min(bins - 1);
        out[i].count += 1;
    }
    out
}

/// Metrics for `rows` of `cands`; `probs` holds one `K`-row per entry of `rows`.
pub fn evaluate(method: &str, split: &str, cands: &CandidateTable, probs: &[f64], rows: &[usize]) -> Result<MetricReport> {
    let k = cands.k;
    if probs.len() != rows.len() * k {
        return Err(Error::dim("evaluate", &[probs.len()], &[rows.len() * k]));
    }
    let mut eval = Vec::new();
    let mut ids = Vec::new();
    let mut n_unlabeled = 0;
    for (i, &r) in rows.iter().enumerate() {
        let er = EvalRow::new(cands.row_target(r), &probs[i * k..(i + 1) * k], cands.row_mask(r))?;
        if !cands.labeled[r] || er.target_mass() <= 0.0 {
            n_unlabeled += 1;
            continue;
        }
        eval.push(er);
        ids.push(r);
    }
    let recall_ks: Vec<usize> = RECALL_KS.iter().copied().chain([k]).collect();
    let mut per_poi = Vec::with_capacity(eval.len());
    for (er, &r) in eval.iter().zip(&ids) {
        per_poi.push(PoiMetrics {
            row: r,
            kl: kl_row(er, KL_EPS),
            mae: mae_row(er)?,
            top1: top1_row(er)?,
            ndcg_50: ndcg_row(er, 50)?,
            recall: recall_ks.iter().map(|&kk| recall_row(er, kk)).collect(),
        });
    }
    let mut ndcg = BTreeMap::new();
    let mut ndcg_excluded = 0;
    for &kk in &NDCG_KS {
        let vals: Vec<Option<f64>> = eval.iter().map(|er| ndcg_row(er, kk)).collect::<Result<_>>()?;
        ndcg_excluded = ndcg_excluded.max(vals.iter().filter(|v| v.is_none()).count());
        ndcg.insert(format!("ndcg@{kk}"), mean(vals.into_iter().flatten()));
    }
    let mut recall = BTreeMap::new();
    for (i, &kk) in recall_ks.iter().enumerate() {
        let name = if i == RECALL_KS.len() { "recall@K".to_string() } else { format!("recall@{kk}") };
        recall.insert(name, mean(per_poi.iter().filter_map(|m| m.recall[i])));
    }
    let r2 = match r2_global(eval.iter()) {
        Ok(v) => Some(v),
        Err(Error::UndefinedR2) | Err(Error::Parameter { .. }) => None,
        Err(e) => return Err(e),
    };
    let kls: Vec<f64> = per_poi.iter().map(|m| m.kl).collect();
    Ok(MetricReport {
        method: method.to_string(),
        split: split.to_string(),
        k,
        n_rows: eval.len(),
        n_unlabeled,
        kl: mean(kls.iter().copied()),
        mae: mean(per_poi.iter().map(|m| m.mae)),
        top1: mean(per_poi.iter().map(|m| m.top1)),
        ndcg,
        ndcg_excluded,
        recall,
        r2,
        mean_captured_mass: mean(ids.iter().map(|&r| cands.captured_mass[r])),
        kl_histogram: histogram(&kls, HIST_BINS),
        per_poi,
    })
}

#[cfg(test)]
mod tests;
