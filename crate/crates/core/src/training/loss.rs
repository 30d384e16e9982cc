use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CandidateTable;
use crate::tensor::{Tape, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    PerPoi,
    /// Each row term is further divided by the candidate-set size.
    #[default]
    PerPoiDivK,
}

/// Row carries positive target mass on its valid slots.
pub fn is_supervised(cands: &CandidateTable, r: usize) -> bool {
    cands.labeled[r]
        && cands
            .row_target(r)
            .iter()
            .zip(cands.row_mask(r))
            .any(|(&t, &m)| m && t > 0.0)
}

/// Rows of `rows` that carry a usable target.
pub fn supervised_rows(cands: &CandidateTable, rows: &[usize]) -> Vec<usize> {
    rows.iter().copied().filter(|&r| is_supervised(cands, r)).collect()
}

/// Mean masked KL(target || probs) over the supervised subset of `rows`.
/// `probs` holds one `K`-row per entry of `rows`. Returns the loss and the
/// number of rows left out for lack of target mass.
pub fn masked_kl_loss(
    t: &mut Tape,
    probs: Var,
    cands: &CandidateTable,
    rows: &[usize],
    mode: LossMode,
) -> Result<(Var, usize)> {
    let k = cands.k;
    if t.value(probs).numel() != rows.len() * k {
        return Err(Error::dim("masked_kl_loss", t.shape(probs), &[rows.len(), k]));
    }
    let on: Vec<bool> = rows.iter().map(|&r| is_supervised(cands, r)).collect();
    let n_on = on.iter().filter(|&&b| b).count();
    let excluded = rows.len() - n_on;
    if excluded > 0 {
        log::warn!("{excluded} rows without target mass left out of the loss");
    }
    if n_on == 0 {
        return Err(Error::validation("no supervised rows in the loss"));
    }
    let mut w = 1.0 / n_on as f64;
    if mode == LossMode::PerPoiDivK {
        w /= k as f64;
    }
    let mut target = Vec::with_capacity(rows.len() * k);
    let mut weight = Vec::with_capacity(rows.len() * k);
    for (&r, &on) in rows.iter().zip(&on) {
        for (j, &m) in cands.row_mask(r).iter().enumerate() {
            let use_it = on && m;
            target.push(if use_it { cands.row_target(r)[j] } else { 0.0 });
            weight.push(if use_it { w } else { 0.0 });
        }
    }
    Ok((t.masked_kl(probs, &target, &weight)?, excluded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn cands(target: Vec<f64>, mask: Vec<bool>, k: usize) -> CandidateTable {
        let n = target.len() / k;
        CandidateTable {
            k,
            cbg: vec![0; n * k],
            dist_m: vec![0.0; n * k],
            mask,
            labeled: (0..n).map(|r| target[r * k..(r + 1) * k].iter().sum::<f64>() > 0.0).collect(),
            target,
            captured_mass: vec![1.0; n],
        }
    }

    fn loss(p: Vec<f64>, c: &CandidateTable, mode: LossMode) -> f64 {
        let mut t = Tape::new();
        let rows: Vec<usize> = (0..c.n_rows()).collect();
        let v = t.constant(Tensor::matrix(rows.len(), c.k, p).unwrap());
        let (l, _) = masked_kl_loss(&mut t, v, c, &rows, mode).unwrap();
        t.value(l).data()[0]
    }

    #[test]
    fn identical_rows_give_zero() {
        let y = vec![0.2, 0.8, 0.0, 1.0];
        let c = cands(y.clone(), vec![true, true, true, false], 2);
        assert_eq!(loss(y, &c, LossMode::PerPoi), 0.0);
    }

    #[test]
    fn one_hot_against_uniform() {
        let c = cands(vec![1.0, 0.0, 0.0, 0.0], vec![true; 4], 4);
        let l = loss(vec![0.25; 4], &c, LossMode::PerPoi);
        assert!((l - 4f64.ln()).abs() < 1e-12);
        let l = loss(vec![0.25; 4], &c, LossMode::PerPoiDivK);
        assert!((l - 4f64.ln() / 4.0).abs() < 1e-12);
    }

    #[test]
    fn masked_values_do_not_matter() {
        let c = cands(vec![0.5, 0.5, 0.0], vec![true, true, false], 3);
        assert_eq!(
            loss(vec![0.3, 0.7, 0.0], &c, LossMode::PerPoi),
            loss(vec![0.3, 0.7, 0.9], &c, LossMode::PerPoi)
        );
    }

    #[test]
    fn zero_mass_rows_are_excluded() {
        let c = cands(vec![0.0, 0.0, 1.0, 0.0], vec![true; 4], 2);
        let mut t = Tape::new();
        let v = t.constant(Tensor::matrix(2, 2, vec![0.5; 4]).unwrap());
        let (l, excluded) = masked_kl_loss(&mut t, v, &c, &[0, 1], LossMode::PerPoi).unwrap();
        assert_eq!(excluded, 1);
        assert!((t.value(l).data()[0] - 2f64.ln()).abs() < 1e-12);
    }
}
