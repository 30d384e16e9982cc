//! Raw node tables: POIs as JSON lines, CBGs as CSV.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One POI row. Missing numeric inputs are read as zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoiRecord {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub home_cbg: Option<String>,
    pub name: String,
    pub brand: String,
    pub top_category: String,
    pub naics_code: String,
    pub region: String,
    pub website_tags: String,
    /// Keyed by the numeric column names of the POI schema.
    pub numeric: BTreeMap<String, f64>,
    /// Weekday (`Mon`..`Sun`) to `[open, close]` pairs.
    pub open_hours: BTreeMap<String, Vec<(String, String)>>,
    pub bucketed_dwell: BTreeMap<String, f64>,
    pub hourly_profile: Vec<f64>,
    /// Origin CBG id to visit count, the supervision signal.
    pub visits: BTreeMap<String, f64>,
    /// Origin CBG id to co-visit count, used for brand links. Falls back to `visits` when absent.
    pub covisits: Option<BTreeMap<String, f64>>,
    pub text_embedding: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CbgRecord {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub features: Vec<f64>,
    pub neighbors: Option<Vec<String>>,
    /// Ring of `[lon, lat]` vertices.
    pub polygon: Option<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CbgTable {
    pub feature_columns: Vec<String>,
    pub rows: Vec<CbgRecord>,
}

pub fn read_pois(reader: impl Read) -> Result<Vec<PoiRecord>> {
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::Parse(format!("poi line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PoiRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse(format!("poi line {}: {e}", i + 1)))?;
        if rec.id.is_empty() {
            return Err(Error::validation(format!("poi line {}: missing id", i + 1)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_pois(mut w: impl Write, pois: &[PoiRecord]) -> Result<()> {
    for p in pois {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io("<poi table>", e))?;
    }
    Ok(())
}

const RESERVED: [&str; 5] = ["id", "lat", "lon", "neighbors", "polygon"];

fn parse_f64(s: &str, what: &str, row: usize) -> Result<f64> {
    let t = s.trim();
    if t.is_empty() {
        return Ok(0.0);
    }
    t.parse()
        .map_err(|_| Error::Parse(format!("cbg row {row}: `{what}` = `{s}` is not a number")))
}

fn parse_polygon(s: &str, row: usize) -> Result<Vec<[f64; 2]>> {
    s.split(';')
        .filter(|v| !v.trim().is_empty())
        .map(|v| {
            let mut it = v.split_whitespace();
            match (it.next(), it.next(), it.next()) {
                (Some(x), Some(y), None) => Ok([parse_f64(x, "polygon", row)?, parse_f64(y, "polygon", row)?]),
                _ => Err(Error::Parse(format!("cbg row {row}: bad polygon vertex `{v}`"))),
            }
        })
        .collect()
}

/// CSV with `id, lat, lon`, feature columns, and optional `neighbors`
/// (`;`-separated ids) and `polygon` (`lon lat;lon lat;...`).
pub fn read_cbgs(reader: impl Read) -> Result<CbgTable> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let pos = |name: &str| headers.iter().position(|h| h == name);
    let (id, lat, lon) = match (pos("id"), pos("lat"), pos("lon")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::validation("cbg table needs id, lat and lon columns")),
    };
    let (nb, poly) = (pos("neighbors"), pos("polygon"));
    let feat_idx: Vec<usize> = (0..headers.len())
        .filter(|&i| !RESERVED.contains(&headers[i].as_str()))
        .collect();
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let field = |i: usize| rec.get(i).unwrap_or("");
        rows.push(CbgRecord {
            id: field(id).trim().to_string(),
            lat: parse_f64(field(lat), "lat", row)?,
            lon: parse_f64(field(lon), "lon", row)?,
            features: feat_idx
                .iter()
                .map(|&i| parse_f64(field(i), &headers[i], row))
                .collect::<Result<_>>()?,
            neighbors: nb.map(|i| {
                field(i)
                    .split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect()
            }),
            polygon: match poly {
                Some(i) if !field(i).trim().is_empty() => Some(parse_polygon(field(i), row)?),
                _ => None,
            },
        });
    }
    Ok(CbgTable {
        feature_columns: feat_idx.iter().map(|&i| headers[i].clone()).collect(),
        rows,
    })
}

pub fn write_cbgs(w: impl Write, table: &CbgTable) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let with_nb = table.rows.iter().any(|r| r.neighbors.is_some());
    let with_poly = table.rows.iter().any(|r| r.polygon.is_some());
    let mut header = vec!["id".to_string(), "lat".into(), "lon".into()];
    header.extend(table.feature_columns.iter().cloned());
    if with_nb {
        header.push("neighbors".into());
    }
    if with_poly {
        header.push("polygon".into());
    }
    wr.write_record(&header)?;
    for r in &table.rows {
        let mut rec = vec![r.id.clone(), r.lat.to_string(), r.lon.to_string()];
        rec.extend(r.features.iter().map(f64::to_string));
        if with_nb {
            rec.push(r.neighbors.as_deref().unwrap_or(&[]).join(";"));
        }
        if with_poly {
            let ring = r.polygon.as_deref().unwrap_or(&[]);
            rec.push(ring.iter().map(|v| format!("{} {}", v[0], v[1])).collect::<Vec<_>>().join(";"));
        }
        wr.write_record(&rec)?;
    }
    wr.flush().map_err(|e| Error::io("<cbg table>", e))?;
    Ok(())
}
