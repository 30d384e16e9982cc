use serde::{Deserialize, Serialize};

use super::builders::cbgs_by_distance;
use super::HeteroGraph;
use crate::error::{Error, Result};

/// Per-POI ordered candidate CBGs with distances, validity mask and a
/// normalized target distribution. Rectangular: `n_poi x k` slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateTable {
    pub k: usize,
    pub cbg: Vec<usize>,
    pub dist_m: Vec<f64>,
    pub mask: Vec<bool>,
    pub target: Vec<f64>,
    /// Row carries a usable target (positive mass on its valid slots).
    pub labeled: Vec<bool>,
    /// Share of the original target mass retained in this row.
    pub captured_mass: Vec<f64>,
}

impl CandidateTable {
    pub fn n_rows(&self) -> usize {
        self.labeled.len()
    }

    pub fn slots(&self, row: usize) -> std::ops::Range<usize> {
        row * self.k..(row + 1) * self.k
    }

    pub fn row_target(&self, row: usize) -> &[f64] {
        &self.target[self.slots(row)]
    }

    pub fn row_mask(&self, row: usize) -> &[bool] {
        &self.mask[self.slots(row)]
    }

    pub fn row_cbg(&self, row: usize) -> &[usize] {
        &self.cbg[self.slots(row)]
    }

    pub fn row_dist(&self, row: usize) -> &[f64] {
        &self.dist_m[self.slots(row)]
    }

    pub fn valid_count(&self, row: usize) -> usize {
        self.row_mask(row).iter().filter(|&&m| m).count()
    }

    /// Copy with every target zeroed; used to check that labels never feed the forward pass.
    pub fn without_targets(&self) -> Self {
        let mut t = self.clone();
        t.target.iter_mut().for_each(|v| *v = 0.0);
        t
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_rows();
        let len = n * self.k;
        if self.cbg.len() != len || self.dist_m.len() != len || self.mask.len() != len || self.target.len() != len {
            return Err(Error::validation("candidate table is not rectangular"));
        }
        for r in 0..n {
            if self.labeled[r] {
                let s: f64 = self
                    .row_target(r)
                    .iter()
                    .zip(self.row_mask(r))
                    .filter(|(_, &m)| m)
                    .map(|(t, _)| t)
                    .sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::validation(format!("row {r} target sums to {s}")));
                }
            }
        }
        Ok(())
    }
}

/// One observed visit flow.
#[derive(Clone, Debug, PartialEq)]
pub struct VisitRecord {
    pub cbg: usize,
    pub poi: usize,
    pub count: f64,
}

/// Full candidate table (every CBG, ordered by projected distance) with
/// targets from L1-normalized visit counts. POIs with no visits are
/// flagged unlabeled.
pub fn attach_visit_labels(graph: &HeteroGraph, visits: &[VisitRecord]) -> Result<CandidateTable> {
    let (np, nc) = (graph.n_poi(), graph.n_cbg());
    let mut counts = vec![0.0; np * nc];
    for v in visits {
        if v.poi >= np || v.cbg >= nc {
            return Err(Error::validation(format!(
                "visit references unknown node (poi {}, cbg {})",
                v.poi, v.cbg
            )));
        }
        if !(v.count >= 0.0) || !v.count.is_finite() {
            return Err(Error::validation(format!("negative visit count {}", v.count)));
        }
        counts[v.poi * nc + v.cbg] += v.count;
    }
    let mut table = CandidateTable {
        k: nc,
        cbg: Vec::with_capacity(np * nc),
        dist_m: Vec::with_capacity(np * nc),
        mask: vec![true; np * nc],
        target: Vec::with_capacity(np * nc),
        labeled: vec![false; np],
        captured_mass: vec![1.0; np],
    };
    for p in 0..np {
        let row = &counts[p * nc..(p + 1) * nc];
        let total: f64 = row.iter().sum();
        table.labeled[p] = total > 0.0;
        for (c, d) in cbgs_by_distance(graph.poi_xy[p], &graph.cbg_xy) {
            table.cbg.push(c);
            table.dist_m.push(d);
            table.target.push(if total > 0.0 { row[c] / total } else { 0.0 });
        }
        if total <= 0.0 {
            table.captured_mass[p] = 0.0;
        }
    }
    Ok(table)
}
