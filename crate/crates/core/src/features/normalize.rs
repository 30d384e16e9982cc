use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::graph::EdgeAttrs;

/// Standard deviations below this are treated as zero variance.
const STD_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    /// `1.0` for zero-variance columns, so they end up centered.
    pub std: f64,
    pub standardize: bool,
}

impl ColumnStats {
    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        if self.standardize {
            (v - self.mean) / self.std
        } else {
            v
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub columns: Vec<ColumnStats>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 1.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    (mean, if std > STD_FLOOR { std } else { 1.0 })
}

impl NormStats {
    /// Population mean/std per column over `rows`; `standardize[c] == false` leaves the column untouched.
    pub fn fit(m: &FeatureMatrix, rows: &[usize], standardize: &[bool]) -> Result<Self> {
        if standardize.len() != m.width() {
            return Err(Error::dim("normalize_features", &[m.width()], &[standardize.len()]));
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= m.rows()) {
            return Err(Error::Index {
                what: "feature row",
                index: r,
                len: m.rows(),
            });
        }
        let columns = (0..m.width())
            .map(|c| {
                if !standardize[c] {
                    return ColumnStats {
                        mean: 0.0,
                        std: 1.0,
                        standardize: false,
                    };
                }
                let (mean, std) = mean_std(rows.iter().map(|&r| m.get(r, c)));
                ColumnStats {
                    mean,
                    std,
                    standardize: true,
                }
            })
            .collect();
        Ok(NormStats { columns })
    }

    pub fn apply(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.columns.len() != m.width() {
            return Err(Error::dim("normalize_features", &[self.columns.len()], &[m.width()]));
        }
        let mut out = m.clone();
        let w = m.width();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = self.columns[i % w].apply(*v);
        }
        Ok(out)
    }
}

/// Fit on `rows`, then transform every row.
pub fn normalize_features(m: &FeatureMatrix, rows: &[usize], standardize: &[bool]) -> Result<(FeatureMatrix, NormStats)> {
    let stats = NormStats::fit(m, rows, standardize)?;
    Ok((stats.apply(m)?, stats))
}

/// Per-relation column standardization over all edges of the relation.
pub fn standardize_edge_attrs(attrs: &EdgeAttrs) -> (EdgeAttrs, NormStats) {
    let d = attrs.dim();
    let n = if d == 0 { 0 } else { attrs.values.len() / d };
    let columns: Vec<ColumnStats> = (0..d)
        .map(|c| {
            let (mean, std) = mean_std((0..n).map(|e| attrs.values[e * d + c]));
            ColumnStats {
                mean,
                std,
                standardize: true,
            }
        })
        .collect();
    let values = attrs
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| columns[i % d].apply(v))
        .collect();
    (
        EdgeAttrs {
            columns: attrs.columns.clone(),
            values,
        },
        NormStats { columns },
    )
}
