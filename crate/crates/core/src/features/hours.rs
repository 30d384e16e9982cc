use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub const WEEKDAYS: [&str; 7] = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];

/// Minutes after midnight for `HH:MM`; `24:00` is accepted as end of day.
pub fn parse_time(s: &str) -> Result<u32> {
    let bad = || Error::Parse(format!("malformed time `{s}`"));
    let (h, m) = s.trim().split_once(':').ok_or_else(bad)?;
    if h.is_empty() || h.len() > 2 || m.len() != 2 {
        return Err(bad());
    }
    let h: u32 = h.parse().map_err(|_| bad())?;
    let m: u32 = m.parse().map_err(|_| bad())?;
    if m > 59 || h > 24 || (h == 24 && m != 0) {
        return Err(bad());
    }
    Ok(h * 60 + m)
}

/// Weekly opening hours as `[mon..sun hours, open_days_in_week]`.
///
/// Intervals whose close precedes the open wrap past midnight and are
/// credited in full to the opening day. Unknown day keys are rejected;
/// missing days count as closed.
pub fn expand_opening_hours(spec: &BTreeMap<String, Vec<(String, String)>>) -> Result<[f64; 8]> {
    let mut out = [0.0; 8];
    for (day, intervals) in spec {
        let idx = WEEKDAYS
            .iter()
            .position(|d| d.eq_ignore_ascii_case(day))
            .ok_or_else(|| Error::Parse(format!("unknown weekday `{day}`")))?;
        for (open, close) in intervals {
            let (o, c) = (parse_time(open)?, parse_time(close)?);
            let minutes = if c >= o { c - o } else { c + 24 * 60 - o };
            out[idx] += minutes as f64 / 60.0;
        }
    }
    out[7] = out[..7].iter().filter(|&&h| h > 0.0).count() as f64;
    Ok(out)
}
