use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::SynthTruth;
use crate::error::{Error, Result};
use crate::graph::CandidateTable;
use crate::metrics::{kl_row, EvalRow, KL_EPS};

/// KL of the sampled targets against the exact process on the same candidate sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseFloor {
    pub k: usize,
    pub mean_kl: f64,
    pub n_rows: usize,
    /// Rows without target mass.
    pub n_excluded: usize,
}

/// True distribution restricted to each candidate row and renormalized,
/// row-major `rows.len() x K`.
pub fn truth_on_candidates(
    truth: &SynthTruth,
    cands: &CandidateTable,
    rows: &[usize],
    poi_ids: &[String],
    cbg_ids: &[String],
) -> Result<Vec<f64>> {
    let pi: HashMap<&str, usize> = truth.poi_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let ci: HashMap<&str, usize> = truth.cbg_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let k = cands.k;
    let mut out = vec![0.0; rows.len() * k];
    for (i, &r) in rows.iter().enumerate() {
        let p = *pi
            .get(poi_ids[r].as_str())
            .ok_or_else(|| Error::validation(format!("truth has no row for `{}`", poi_ids[r])))?;
        let row = truth.row(p);
        let slot = &mut out[i * k..(i + 1) * k];
        for j in 0..k {
            if cands.row_mask(r)[j] {
                let c = *ci
                    .get(cbg_ids[cands.row_cbg(r)[j]].as_str())
                    .ok_or_else(|| Error::validation("truth is missing a candidate CBG"))?;
                slot[j] = row[c];
            }
        }
        let s: f64 = slot.iter().sum();
        if s > 0.0 {
            slot.iter_mut().for_each(|v| *v /= s);
        }
    }
    Ok(out)
}

/// Mean `KL(sampled || truth)` over labeled rows.
pub fn truth_metrics(
    truth: &SynthTruth,
    cands: &CandidateTable,
    rows: &[usize],
    poi_ids: &[String],
    cbg_ids: &[String],
) -> Result<NoiseFloor> {
    let q = truth_on_candidates(truth, cands, rows, poi_ids, cbg_ids)?;
    let k = cands.k;
    let (mut total, mut n, mut excluded) = (0.0, 0, 0);
    for (i, &r) in rows.iter().enumerate() {
        let er = EvalRow::new(cands.row_target(r), &q[i * k..(i + 1) * k], cands.row_mask(r))?;
        if !cands.labeled[r] || er.target_mass() <= 0.0 {
            excluded += 1;
            continue;
        }
        total += kl_row(&er, KL_EPS);
        n += 1;
    }
    Ok(NoiseFloor {
        k,
        mean_kl: if n > 0 { total / n as f64 } else { f64::NAN },
        n_rows: n,
        n_excluded: excluded,
    })
}
