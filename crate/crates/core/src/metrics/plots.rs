//! Plot-ready CSV outputs.

use std::path::Path;

use super::{MetricReport, RECALL_KS};
use crate::error::{Error, Result};
use crate::graph::CandidateTable;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// `method, poi_id, kl, mae, top1, ndcg@50, recall@5, recall@10, recall@15`.
pub fn write_per_poi(path: &Path, report: &MetricReport, poi_ids: &[String]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["method".to_string(), "poi_id".into(), "kl".into(), "mae".into(), "top1".into(), "ndcg@50".into()];
    header.extend(RECALL_KS.iter().map(|k| format!("recall@{k}")));
    w.write_record(&header)?;
    for m in &report.per_poi {
        let mut rec = vec![
            report.method.clone(),
            poi_ids[m.row].clone(),
            m.kl.to_string(),
            m.mae.to_string(),
            m.top1.to_string(),
            opt(m.ndcg_50),
        ];
        rec.extend(m.recall.iter().take(RECALL_KS.len()).map(|&v| opt(v)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `bin_lo, bin_hi, count` for the per-POI KL histogram.
pub fn write_histogram(path: &Path, report: &MetricReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["method", "bin_lo", "bin_hi", "count"])?;
    for b in &report.kl_histogram {
        w.write_record([report.method.clone(), b.lo.to_string(), b.hi.to_string(), b.count.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Predicted against observed share for every valid labeled pair.
pub fn write_scatter(
    path: &Path,
    method: &str,
    cands: &CandidateTable,
    probs: &[f64],
    rows: &[usize],
    poi_ids: &[String],
    cbg_ids: &[String],
) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["method", "poi_id", "cbg_id", "observed", "predicted"])?;
    let k = cands.k;
    for (i, &r) in rows.iter().enumerate() {
        if !cands.labeled[r] {
            continue;
        }
        for j in 0..k {
            if cands.row_mask(r)[j] {
                w.write_record([
                    method.to_string(),
                    poi_ids[r].clone(),
                    cbg_ids[cands.row_cbg(r)[j]].clone(),
                    cands.row_target(r)[j].to_string(),
                    probs[i * k + j].to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
