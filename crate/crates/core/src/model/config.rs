use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::RelationKind;
use crate::tensor::ReduceMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PpRelation {
    GeoKnn,
    TimeSim,
    Brand,
}

impl PpRelation {
    pub const ALL: [PpRelation; 3] = [PpRelation::GeoKnn, PpRelation::TimeSim, PpRelation::Brand];

    pub fn kind(self) -> RelationKind {
        match self {
            PpRelation::GeoKnn => RelationKind::PoiGeoKnnPoi,
            PpRelation::TimeSim => RelationKind::PoiTimeSimPoi,
            PpRelation::Brand => RelationKind::PoiBrandPoi,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PpRelation::GeoKnn => "geo_knn",
            PpRelation::TimeSim => "time_sim",
            PpRelation::Brand => "brand",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossEdgeMode {
    #[serde(rename = "belong+knn")]
    BelongKnn,
    BelongOnly,
    KnnOnly,
    KnnNoAttr,
    #[serde(rename = "belong+knn_no_attr")]
    BelongKnnNoAttr,
}

impl CrossEdgeMode {
    pub fn uses_belong(self) -> bool {
        matches!(self, CrossEdgeMode::BelongKnn | CrossEdgeMode::BelongOnly | CrossEdgeMode::BelongKnnNoAttr)
    }

    pub fn uses_knn(self) -> bool {
        self != CrossEdgeMode::BelongOnly
    }

    pub fn knn_distance(self) -> bool {
        matches!(self, CrossEdgeMode::BelongKnn | CrossEdgeMode::KnnOnly)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_cbg: usize,
    pub d_poi: usize,
    pub d_hid: usize,
    pub d_e: usize,
    pub dropout: f64,
    pub agg_pp: ReduceMode,
    pub enabled_pp_relations: Vec<PpRelation>,
    pub use_graphnorm: bool,
    pub use_cbg_adjacency: bool,
    pub cross_edge_mode: CrossEdgeMode,
    /// Candidate-set size.
    pub k: usize,
    /// Scorer widths; the last entry must be 1.
    pub head_widths: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_cbg: 64,
            d_poi: 64,
            d_hid: 64,
            d_e: 16,
            dropout: 0.1,
            agg_pp: ReduceMode::Mean,
            enabled_pp_relations: PpRelation::ALL.to_vec(),
            use_graphnorm: true,
            use_cbg_adjacency: true,
            cross_edge_mode: CrossEdgeMode::BelongKnn,
            k: 20,
            head_widths: vec![128, 64, 1],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("d_cbg", self.d_cbg), ("d_poi", self.d_poi), ("d_hid", self.d_hid), ("d_e", self.d_e), ("k", self.k)] {
            if v == 0 {
                return Err(Error::param(name, "must be positive"));
            }
        }
        if self.d_hid % 2 != 0 || self.d_cbg % 2 != 0 {
            return Err(Error::param("d_hid", "SAGE layers need even widths for d_cbg and d_hid"));
        }
        #[allow(clippy::manual_range_contains)]
        if !(self.dropout >= 0.0 && self.dropout < 1.0) {
            return Err(Error::param("dropout", format!("{} not in [0, 1)", self.dropout)));
        }
        if self.head_widths.last() != Some(&1) || self.head_widths.iter().any(|&w| w == 0) {
            return Err(Error::param("head_widths", "positive widths ending in 1 required"));
        }
        let mut seen = self.enabled_pp_relations.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.enabled_pp_relations.len() {
            return Err(Error::param("enabled_pp_relations", "duplicate relation"));
        }
        Ok(())
    }

    pub fn enabled(&self, r: PpRelation) -> bool {
        self.enabled_pp_relations.contains(&r)
    }
}
