use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub const DWELL_BINS: [&str; 7] = ["<5", "5-10", "11-20", "21-60", "61-120", "121-240", ">240"];

/// Dwell-time counts placed in the fixed seven-bin order, then L1-normalized.
pub fn bucket_dwell(hist: &BTreeMap<String, f64>) -> Result<[f64; 7]> {
    let mut out = [0.0; 7];
    for (label, &count) in hist {
        let i = DWELL_BINS
            .iter()
            .position(|b| b == label)
            .ok_or_else(|| Error::validation(format!("unknown dwell bucket `{label}`")))?;
        if !(count >= 0.0) || !count.is_finite() {
            return Err(Error::validation(format!("dwell bucket `{label}` has count {count}")));
        }
        out[i] += count;
    }
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        out.iter_mut().for_each(|v| *v /= total);
    }
    Ok(out)
}
