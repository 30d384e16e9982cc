//! Locked POI and CBG feature schemas and the pipelines that fill them.

pub mod codebook;
pub mod dwell;
pub mod hours;
pub mod normalize;
pub mod schema;
pub mod text;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use codebook::{naics2, Codebook};
pub use dwell::{bucket_dwell, DWELL_BINS};
pub use hours::{expand_opening_hours, WEEKDAYS};
pub use normalize::{normalize_features, standardize_edge_attrs, ColumnStats, NormStats};
pub use schema::{cbg_schema, poi_schema, ColumnSpec, Normalization, SchemaManifest, CBG_WIDTH, POI_WIDTH};
pub use text::{embed_text, TextFields, TextMode, TEXT_DIM};

/// Dense row-major matrix with named columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub columns: Vec<String>,
    rows: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(columns: Vec<String>, rows: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * columns.len() {
            return Err(Error::validation(format!(
                "feature matrix has {} values for {rows} rows x {} columns",
                data.len(),
                columns.len()
            )));
        }
        Ok(FeatureMatrix { columns, rows, data })
    }

    pub fn zeros(columns: Vec<String>, rows: usize) -> Self {
        let data = vec![0.0; rows * columns.len()];
        FeatureMatrix { columns, rows, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.width();
        &self.data[r * w..(r + 1) * w]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let w = self.width();
        &mut self.data[r * w..(r + 1) * w]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width() + c]
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        let w = self.width();
        (0..self.rows).map(move |r| self.data[r * w + c])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows checked against a manifest's column names, in order.
    pub fn conforms_to(&self, schema: &SchemaManifest) -> Result<()> {
        schema.verify()?;
        if self.columns.len() != schema.columns.len()
            || self.columns.iter().zip(&schema.columns).any(|(a, b)| *a != b.name)
        {
            return Err(Error::validation(format!(
                "feature columns do not match schema `{}`",
                schema.name
            )));
        }
        Ok(())
    }
}
