use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dwell::DWELL_BINS;
use super::hours::WEEKDAYS;
use super::text::{TextMode, TEXT_DIM};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const POI_WIDTH: usize = 795;
pub const CBG_WIDTH: usize = 74;

pub const POI_NUMERIC: [&str; 10] = [
    "wkt_area_sq_meters",
    "raw_visit_counts",
    "raw_visitor_counts",
    "distance_from_home",
    "median_dwell",
    "normalized_visits_by_state_scaling",
    "normalized_visits_by_region_naics_visits",
    "normalized_visits_by_region_naics_visitors",
    "normalized_visits_by_total_visits",
    "normalized_visits_by_total_visitors",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Standardize,
    /// Block already carries its own scale.
    Exempt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub block: String,
    pub normalization: Normalization,
}

/// Ordered column list for one node type, content-addressed by `hash`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemaManifest {
    pub name: String,
    pub version: u32,
    pub width: usize,
    pub columns: Vec<ColumnSpec>,
    pub codebook_hash: String,
    pub text_mode: Option<TextMode>,
    pub hash: String,
}

impl SchemaManifest {
    fn new(name: &str, columns: Vec<ColumnSpec>, codebook_hash: String, text_mode: Option<TextMode>) -> Self {
        let mut m = SchemaManifest {
            name: name.to_string(),
            version: SCHEMA_VERSION,
            width: columns.len(),
            columns,
            codebook_hash,
            text_mode,
            hash: String::new(),
        };
        m.hash = m.content_hash();
        m
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.name.as_bytes());
        h.update(self.version.to_le_bytes());
        for c in &self.columns {
            h.update([0u8]);
            h.update(c.name.as_bytes());
            h.update([1u8]);
            h.update(c.block.as_bytes());
            h.update([matches!(c.normalization, Normalization::Standardize) as u8]);
        }
        h.update([2u8]);
        h.update(self.codebook_hash.as_bytes());
        h.update(self.text_mode.map_or("", TextMode::name).as_bytes());
        hex::encode(h.finalize())
    }

    /// Rejects manifests whose content no longer matches their hash.
    pub fn verify(&self) -> Result<()> {
        if self.width != self.columns.len() || self.hash != self.content_hash() {
            return Err(Error::validation(format!(
                "schema manifest `{}` does not match its content hash",
                self.name
            )));
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn standardized(&self) -> Vec<bool> {
        self.columns
            .iter()
            .map(|c| c.normalization == Normalization::Standardize)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: SchemaManifest = serde_json::from_str(s)?;
        m.verify()?;
        Ok(m)
    }
}

fn col(name: impl Into<String>, block: &str, normalization: Normalization) -> ColumnSpec {
    ColumnSpec {
        name: name.into(),
        block: block.to_string(),
        normalization,
    }
}

pub fn poi_schema(codebook_hash: String, text_mode: TextMode) -> SchemaManifest {
    use Normalization::*;
    let mut cols = Vec::with_capacity(POI_WIDTH);
    cols.extend(POI_NUMERIC.iter().map(|n| col(*n, "numeric", Standardize)));
    cols.extend(WEEKDAYS.iter().map(|d| col(format!("open_{}_hours", d.to_lowercase()), "hours", Standardize)));
    cols.push(col("open_days_in_week", "hours", Standardize));
    cols.extend(DWELL_BINS.iter().map(|b| col(format!("dwell_{b}"), "dwell", Exempt)));
    cols.push(col("top_category_id", "category", Standardize));
    cols.push(col("naics2_id", "category", Standardize));
    cols.extend((0..TEXT_DIM).map(|i| col(format!("text_{i:03}"), "text", Exempt)));
    debug_assert_eq!(cols.len(), POI_WIDTH);
    SchemaManifest::new("poi", cols, codebook_hash, Some(text_mode))
}

/// 72 socio-demographic columns followed by projected centroid coordinates.
pub fn cbg_schema(demographic: &[String]) -> Result<SchemaManifest> {
    if demographic.len() != CBG_WIDTH - 2 {
        return Err(Error::validation(format!(
            "expected {} CBG feature columns, got {}",
            CBG_WIDTH - 2,
            demographic.len()
        )));
    }
    let mut cols: Vec<ColumnSpec> = demographic
        .iter()
        .map(|n| col(n.clone(), "demographic", Normalization::Standardize))
        .collect();
    cols.push(col("centroid_x", "centroid", Normalization::Standardize));
    cols.push(col("centroid_y", "centroid", Normalization::Standardize));
    Ok(SchemaManifest::new("cbg", cols, String::new(), None))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widths_are_locked() {
        let p = poi_schema("abc".into(), TextMode::HashStub);
        assert_eq!(p.width, POI_WIDTH);
        p.verify().unwrap();
        let names: Vec<String> = (0..72).map(|i| format!("acs_{i:02}")).collect();
        let c = cbg_schema(&names).unwrap();
        assert_eq!(c.width, CBG_WIDTH);
        assert!(cbg_schema(&names[..10]).is_err());
    }

    #[test]
    fn reorder_changes_hash_and_is_rejected() {
        let p = poi_schema("abc".into(), TextMode::HashStub);
        let mut q = p.clone();
        q.columns.swap(0, 1);
        assert_ne!(q.content_hash(), p.hash);
        assert!(q.verify().is_err());
        let json = q.to_json().unwrap();
        assert!(SchemaManifest::from_json(&json).is_err());
        assert_eq!(SchemaManifest::from_json(&p.to_json().unwrap()).unwrap(), p);
    }
}
