use crate::error::{Error, Result};
use crate::graph::CandidateTable;

/// Keeps the `k` nearest slots of every row and renormalizes targets over
/// them. Captured mass composes with any earlier truncation. Rows whose
/// kept slots hold no target mass become unlabeled. Widening pads with
/// masked slots.
pub fn truncate_candidates(table: &CandidateTable, k: usize) -> Result<CandidateTable> {
    if k == 0 {
        return Err(Error::param("k", "candidate-set size must be at least 1"));
    }
    let n = table.n_rows();
    let keep = k.min(table.k);
    let mut out = CandidateTable {
        k,
        cbg: Vec::with_capacity(n * k),
        dist_m: Vec::with_capacity(n * k),
        mask: Vec::with_capacity(n * k),
        target: Vec::with_capacity(n * k),
        labeled: table.labeled.clone(),
        captured_mass: table.captured_mass.clone(),
    };
    for r in 0..n {
        let s = table.slots(r);
        let kept = s.start..s.start + keep;
        let mass: f64 = kept
            .clone()
            .filter(|&i| table.mask[i])
            .map(|i| table.target[i])
            .sum();
        let rescale = keep < table.k && table.labeled[r];
        if rescale {
            out.captured_mass[r] *= mass;
            if mass <= 0.0 {
                out.labeled[r] = false;
                out.captured_mass[r] = 0.0;
            }
        }
        for i in kept {
            out.cbg.push(table.cbg[i]);
            out.dist_m.push(table.dist_m[i]);
            out.mask.push(table.mask[i]);
            let t = table.target[i];
            out.target.push(match (rescale, mass > 0.0) {
                (true, true) => t / mass,
                (true, false) => 0.0,
                _ => t,
            });
        }
        for _ in keep..k {
            out.cbg.push(0);
            out.dist_m.push(f64::INFINITY);
            out.mask.push(false);
            out.target.push(0.0);
        }
        if out.mask[r * k..(r + 1) * k].iter().all(|&m| !m) {
            return Err(Error::DegenerateCandidates(format!("row {r}")));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(targets: &[Vec<f64>]) -> CandidateTable {
        let k = targets[0].len();
        let n = targets.len();
        CandidateTable {
            k,
            cbg: (0..n).flat_map(|_| 0..k).collect(),
            dist_m: (0..n).flat_map(|_| (0..k).map(|j| j as f64 * 100.0)).collect(),
            mask: vec![true; n * k],
            target: targets.concat(),
            labeled: targets.iter().map(|t| t.iter().sum::<f64>() > 0.0).collect(),
            captured_mass: targets.iter().map(|t| if t.iter().sum::<f64>() > 0.0 { 1.0 } else { 0.0 }).collect(),
        }
    }

    #[test]
    fn wide_k_keeps_everything() {
        let t = table(&[vec![0.5, 0.25, 0.25]]);
        assert_eq!(truncate_candidates(&t, 3).unwrap(), t);
        let wide = truncate_candidates(&t, 5).unwrap();
        assert_eq!(wide.row_target(0), &[0.5, 0.25, 0.25, 0.0, 0.0]);
        assert_eq!(wide.row_mask(0), &[true, true, true, false, false]);
        assert_eq!(wide.captured_mass, vec![1.0]);
    }

    #[test]
    fn nearest_only() {
        let t = truncate_candidates(&table(&[vec![1.0, 0.0, 0.0]]), 1).unwrap();
        assert_eq!(t.row_target(0), &[1.0]);
        assert_eq!(t.captured_mass, vec![1.0]);
    }

    #[test]
    fn uniform_halves() {
        let t = truncate_candidates(&table(&[vec![0.25; 4]]), 2).unwrap();
        assert_eq!(t.row_target(0), &[0.5, 0.5]);
        assert_eq!(t.captured_mass, vec![0.5]);
        let again = truncate_candidates(&t, 1).unwrap();
        assert_eq!(again.captured_mass, vec![0.25]);
    }

    #[test]
    fn zero_mass_rows_become_unlabeled() {
        let t = truncate_candidates(&table(&[vec![0.0, 0.0, 1.0]]), 2).unwrap();
        assert!(!t.labeled[0]);
        assert_eq!(t.captured_mass, vec![0.0]);
        assert_eq!(t.row_target(0), &[0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn idempotent_and_normalized(raw in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 6), 1..6), k in 1usize..8) {
            let rows: Vec<Vec<f64>> = raw.iter().map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(|v| if s > 0.0 { v / s } else { 0.0 }).collect()
            }).collect();
            let once = truncate_candidates(&table(&rows), k).unwrap();
            let twice = truncate_candidates(&once, k).unwrap();
            prop_assert_eq!(&once, &twice);
            for r in 0..once.n_rows() {
                if once.labeled[r] {
                    let s: f64 = once.row_target(r).iter().sum();
                    prop_assert!((s - 1.0).abs() < 1e-12);
                }
                prop_assert!(once.captured_mass[r] <= 1.0 + 1e-12);
            }
        }
    }
}
