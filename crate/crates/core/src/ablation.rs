//! Component toggles for the ablation panels.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{CrossEdgeMode, PpRelation};
use crate::training::TrainConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// sha256 of the compact JSON form of any serializable value.
pub fn content_hash<T: Serialize + ?Sized>(v: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(v)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    PpRelations,
    CbgAdjacency,
    CrossEdges,
    Graphnorm,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::PpRelations, Axis::CbgAdjacency, Axis::CrossEdges, Axis::Graphnorm];

    pub fn name(self) -> &'static str {
        match self {
            Axis::PpRelations => "pp_relations",
            Axis::CbgAdjacency => "cbg_adjacency",
            Axis::CrossEdges => "cross_edges",
            Axis::Graphnorm => "graphnorm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Axis::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            Error::validation(format!(
                "unknown ablation axis `{s}` (expected pp_relations, cbg_adjacency, cross_edges or graphnorm)"
            ))
        })
    }

    /// Settings in the order they are swept; the first is the full model.
    pub fn values(self) -> &'static [&'static str] {
        match self {
            Axis::PpRelations => &["all", "none", "geo_knn", "time_sim", "brand"],
            Axis::CbgAdjacency | Axis::Graphnorm => &["on", "off"],
            Axis::CrossEdges => &["belong+knn", "belong_only", "knn_only", "knn_no_attr", "belong+knn_no_attr"],
        }
    }

    pub fn apply(self, value: &str, cfg: &mut TrainConfig) -> Result<()> {
        let m = &mut cfg.model;
        let bad = || Error::validation(format!("axis `{}` has no setting `{value}`", self.name()));
        match self {
            Axis::PpRelations => {
                m.enabled_pp_relations = match value {
                    "all" => PpRelation::ALL.to_vec(),
                    "none" => Vec::new(),
                    one => vec![PpRelation::ALL.into_iter().find(|r| r.name() == one).ok_or_else(bad)?],
                }
            }
            Axis::CbgAdjacency => m.use_cbg_adjacency = on_off(value).ok_or_else(bad)?,
            Axis::Graphnorm => m.use_graphnorm = on_off(value).ok_or_else(bad)?,
            Axis::CrossEdges => {
                m.cross_edge_mode = serde_json::from_value::<CrossEdgeMode>(value.into()).map_err(|_| bad())?
            }
        }
        Ok(())
    }
}

fn on_off(v: &str) -> Option<bool> {
    match v {
        "on" => Some(true),
        "off" => Some(false),
        _ => None,
    }
}

/// One configuration in an ablation sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub settings: Vec<(Axis, String)>,
    pub config: TrainConfig,
}

impl Variant {
    pub fn label(&self) -> String {
        if self.settings.is_empty() {
            return "full".into();
        }
        self.settings
            .iter()
            .map(|(a, v)| format!("{}={v}", a.name()))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Axes swept by a named panel `a`..`d`.
pub fn panel(name: &str) -> Result<Axis> {
    match name {
        "a" => Ok(Axis::PpRelations),
        "b" => Ok(Axis::CbgAdjacency),
        "c" => Ok(Axis::CrossEdges),
        "d" => Ok(Axis::Graphnorm),
        _ => Err(Error::validation(format!("unknown panel `{name}` (expected a, b, c or d)"))),
    }
}

/// Every combination of the settings of `axes`, starting from `base`.
pub fn variants(base: &TrainConfig, axes: &[Axis]) -> Result<Vec<Variant>> {
    let mut out = vec![Variant {
        settings: Vec::new(),
        config: base.clone(),
    }];
    for &axis in axes {
        if out.iter().any(|v| v.settings.iter().any(|(a, _)| *a == axis)) {
            return Err(Error::validation(format!("axis `{}` requested twice", axis.name())));
        }
        let mut next = Vec::with_capacity(out.len() * axis.values().len());
        for v in &out {
            for value in axis.values() {
                let mut c = v.clone();
                axis.apply(value, &mut c.config)?;
                c.settings.push((axis, value.to_string()));
                next.push(c);
            }
        }
        out = next;
    }
    Ok(out)
}
