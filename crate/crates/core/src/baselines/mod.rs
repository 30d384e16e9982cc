//! Comparison methods under the shared candidate protocol: exponential
//! distance decay (KNN-Geo) and the feature-only pairwise scorer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CandidateTable;
use crate::metrics::{kl_row, EvalRow, KL_EPS};
use crate::training::loss::supervised_rows;
pub use crate::model::PairwiseMlp;

pub const LAMBDA_GRID_POINTS: usize = 50;
pub const LAMBDA_MIN_M: f64 = 50.0;
pub const LAMBDA_MAX_M: f64 = 50_000.0;

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// `p ∝ exp(-d / λ)` over valid candidates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnGeo {
    pub lambda_m: f64,
}

impl KnnGeo {
    pub fn new(lambda_m: f64) -> Result<Self> {
        if !(lambda_m > 0.0) {
            return Err(Error::param("lambda_m", "decay scale must be positive"));
        }
        Ok(KnnGeo { lambda_m })
    }

    pub fn predict_row(&self, dist_m: &[f64], mask: &[bool], out: &mut [f64]) -> Result<()> {
        let d_min = dist_m
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&d, _)| d)
            .fold(f64::INFINITY, f64::min);
        if !d_min.is_finite() {
            return Err(Error::DegenerateMask);
        }
        let mut total = 0.0;
        for j in 0..dist_m.len() {
            out[j] = if mask[j] { (-(dist_m[j] - d_min) / self.lambda_m).exp() } else { 0.0 };
            total += out[j];
        }
        out.iter_mut().for_each(|v| *v /= total);
        Ok(())
    }

    /// Row-major probabilities for `rows`.
    pub fn predict(&self, cands: &CandidateTable, rows: &[usize]) -> Result<Vec<f64>> {
        let k = cands.k;
        let mut out = vec![0.0; rows.len() * k];
        for (i, &r) in rows.iter().enumerate() {
            self.predict_row(cands.row_dist(r), cands.row_mask(r), &mut out[i * k..(i + 1) * k])?;
        }
        Ok(out)
    }

    /// Mean KL over the supervised subset of `rows`.
    pub fn mean_kl(&self, cands: &CandidateTable, rows: &[usize]) -> Result<f64> {
        let rows = supervised_rows(cands, rows);
        let mut buf = vec![0.0; cands.k];
        let mut total = 0.0;
        for &r in &rows {
            self.predict_row(cands.row_dist(r), cands.row_mask(r), &mut buf)?;
            total += kl_row(&EvalRow::new(cands.row_target(r), &buf, cands.row_mask(r))?, KL_EPS);
        }
        Ok(total / rows.len().max(1) as f64)
    }

    /// Grid search of λ minimizing mean KL on `rows`; ties go to the smaller λ.
    pub fn fit(cands: &CandidateTable, rows: &[usize], grid: &[f64]) -> Result<(Self, Vec<(f64, f64)>)> {
        if supervised_rows(cands, rows).is_empty() {
            return Err(Error::validation("no labeled rows to fit the decay scale"));
        }
        let mut curve = Vec::with_capacity(grid.len());
        let mut best: Option<(f64, f64)> = None;
        for &l in grid {
            let kl = KnnGeo::new(l)?.mean_kl(cands, rows)?;
            curve.push((l, kl));
            if best.map_or(true, |(_, b)| kl < b) {
                best = Some((l, kl));
            }
        }
        let (l, _) = best.ok_or_else(|| Error::param("grid", "empty λ grid"))?;
        Ok((KnnGeo::new(l)?, curve))
    }

    pub fn default_grid() -> Vec<f64> {
        log_grid(LAMBDA_GRID_POINTS, LAMBDA_MIN_M, LAMBDA_MAX_M)
    }
}
