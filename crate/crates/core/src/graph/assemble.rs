//! Raw tables to a validated bundle.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::builders::{
    build_cbg_adjacency, build_cross_edges, build_poi_brand, build_poi_geo_knn, build_poi_time_sim,
    keep_top_k_by_weight, AdjacencyInput, CovisitRecord,
};
use super::bundle::Bundle;
use super::input::{CbgTable, PoiRecord};
use super::labels::{attach_visit_labels, VisitRecord};
use super::{GeoPoint, GraphMetadata, HeteroGraph, LocalProjection, NodeSet, NodeType, Relation, RelationKind};
use crate::error::{Error, Result};
use crate::features::schema::{POI_NUMERIC, SCHEMA_VERSION};
use crate::features::{
    bucket_dwell, cbg_schema, embed_text, expand_opening_hours, naics2, poi_schema, Codebook, FeatureMatrix, NormStats,
    TextFields, TextMode,
};
use crate::training::make_split;

pub const HOURS_PER_WEEK: usize = 168;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildParams {
    pub region: String,
    pub week: String,
    /// Geo-KNN degree among POIs.
    pub k_pp: usize,
    /// Temporal-similarity degree among POIs.
    pub k_time: usize,
    /// Per-POI cap on brand links; 0 keeps every link.
    pub k_brand: usize,
    /// POI -> CBG KNN cross edges.
    pub k_cross: usize,
    pub text_mode: TextMode,
    /// `log1p` on raw visit and visitor counts before standardization.
    pub log1p_counts: bool,
    pub split_seed: u64,
}

impl Default for BuildParams {
    fn default() -> Self {
        BuildParams {
            region: "region".into(),
            week: "week".into(),
            k_pp: 10,
            k_time: 10,
            k_brand: 10,
            k_cross: 10,
            text_mode: TextMode::HashStub,
            log1p_counts: false,
            split_seed: 0,
        }
    }
}

impl BuildParams {
    fn as_map(&self) -> BTreeMap<String, String> {
        let v = serde_json::to_value(self).unwrap_or_default();
        v.as_object()
            .map(|o| o.iter().map(|(k, v)| (k.clone(), v.to_string())).collect())
            .unwrap_or_default()
    }
}

fn canonical_brand(b: &str) -> String {
    b.trim().to_lowercase()
}

fn poi_feature_rows(
    pois: &[PoiRecord],
    params: &BuildParams,
    categories: &Codebook,
    sectors: &Codebook,
) -> Result<Vec<f64>> {
    let mut data = Vec::with_capacity(pois.len() * crate::features::POI_WIDTH);
    for p in pois {
        let ctx = |e: Error| Error::validation(format!("poi `{}`: {e}", p.id));
        if let Some(k) = p.numeric.keys().find(|k| !POI_NUMERIC.contains(&k.as_str())) {
            return Err(Error::validation(format!("poi `{}`: unknown numeric column `{k}`", p.id)));
        }
        for (i, name) in POI_NUMERIC.iter().enumerate() {
            let v = p.numeric.get(*name).copied().unwrap_or(0.0);
            if !v.is_finite() {
                return Err(Error::validation(format!("poi `{}`: `{name}` is not finite", p.id)));
            }
            data.push(if params.log1p_counts && (i == 1 || i == 2) { v.max(0.0).ln_1p() } else { v });
        }
        data.extend(expand_opening_hours(&p.open_hours).map_err(ctx)?);
        data.extend(bucket_dwell(&p.bucketed_dwell).map_err(ctx)?);
        data.push(categories.encode(&p.top_category) as f64);
        data.push(sectors.encode(&naics2(&p.naics_code)) as f64);
        let fields = TextFields {
            name: &p.name,
            brand: &p.brand,
            categories: &p.top_category,
            region: &p.region,
            website_tags: &p.website_tags,
        };
        data.extend(embed_text(&fields, params.text_mode, p.text_embedding.as_deref()).map_err(ctx)?);
    }
    Ok(data)
}

fn profile(p: &PoiRecord) -> Result<Vec<f64>> {
    match p.hourly_profile.len() {
        0 => Ok(vec![0.0; HOURS_PER_WEEK]),
        HOURS_PER_WEEK => Ok(p.hourly_profile.clone()),
        n => Err(Error::validation(format!(
            "poi `{}`: hourly profile has {n} entries, expected {HOURS_PER_WEEK}",
            p.id
        ))),
    }
}

/// Builds every relation, the labels, the split and the feature statistics.
pub fn build_bundle(pois: &[PoiRecord], cbgs: &CbgTable, params: &BuildParams) -> Result<Bundle> {
    let poi_set = NodeSet::new(NodeType::Poi, pois.iter().map(|p| p.id.clone()).collect())?;
    let cbg_set = NodeSet::new(NodeType::Cbg, cbgs.rows.iter().map(|c| c.id.clone()).collect())?;
    if cbg_set.count() == 0 {
        return Err(Error::validation("cbg table is empty"));
    }
    let poi_geo = pois.iter().map(|p| GeoPoint::new(p.lat, p.lon)).collect::<Result<Vec<_>>>()?;
    let cbg_geo = cbgs.rows.iter().map(|c| GeoPoint::new(c.lat, c.lon)).collect::<Result<Vec<_>>>()?;
    let all: Vec<GeoPoint> = poi_geo.iter().chain(&cbg_geo).copied().collect();
    let projection = LocalProjection::centered_on(&all);

    let home: Vec<Option<usize>> = pois
        .iter()
        .map(|p| p.home_cbg.as_deref().map(|h| cbg_set.resolve(h)).transpose())
        .collect::<Result<_>>()?;

    let categories = Codebook::build(pois.iter().map(|p| p.top_category.as_str()));
    let sector_codes: Vec<String> = pois.iter().map(|p| naics2(&p.naics_code)).collect();
    let sectors = Codebook::build(sector_codes.iter().map(String::as_str));
    let codebook_hash = format!("{}:{}", categories.hash(), sectors.hash());
    let poi_manifest = poi_schema(codebook_hash, params.text_mode);
    let poi_features = FeatureMatrix::new(
        poi_manifest.names(),
        pois.len(),
        poi_feature_rows(pois, params, &categories, &sectors)?,
    )?;

    let cbg_manifest = cbg_schema(&cbgs.feature_columns)?;
    let mut cbg_data = Vec::with_capacity(cbgs.rows.len() * crate::features::CBG_WIDTH);
    for (c, row) in cbgs.rows.iter().enumerate() {
        if row.features.len() != cbgs.feature_columns.len() || row.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(format!("cbg `{}`: malformed feature row", row.id)));
        }
        cbg_data.extend_from_slice(&row.features);
        cbg_data.extend(projection.project(cbg_geo[c]));
    }
    let cbg_features = FeatureMatrix::new(cbg_manifest.names(), cbgs.rows.len(), cbg_data)?;

    let metadata = GraphMetadata {
        region: params.region.clone(),
        week: params.week.clone(),
        schema_version: SCHEMA_VERSION,
        poi_schema_hash: poi_manifest.hash.clone(),
        cbg_schema_hash: cbg_manifest.hash.clone(),
        text_mode: params.text_mode.name().to_string(),
        build_params: params.as_map(),
    };
    let mut graph = HeteroGraph::new(
        poi_set,
        cbg_set,
        poi_geo,
        cbg_geo,
        projection,
        home.iter().map(|h| h.unwrap_or(0)).collect(),
        poi_features,
        cbg_features,
        metadata,
    )?;

    let (belong, knn) = build_cross_edges(&graph.poi_xy, &graph.cbg_xy, &home, params.k_cross.min(graph.n_cbg()))?;
    graph.add_relation(belong)?;
    graph.add_relation(knn)?;
    graph.add_relation(build_poi_geo_knn(&graph.poi_geo, params.k_pp)?)?;
    let profiles = pois.iter().map(profile).collect::<Result<Vec<_>>>()?;
    graph.add_relation(build_poi_time_sim(&profiles, params.k_time)?)?;

    let mut covisits = Vec::new();
    for (i, p) in pois.iter().enumerate() {
        let brand = canonical_brand(&p.brand);
        if brand.is_empty() {
            continue;
        }
        for (origin, &count) in p.covisits.as_ref().unwrap_or(&p.visits) {
            covisits.push(CovisitRecord {
                poi: i,
                origin_cbg: graph.cbgs.resolve(origin)?,
                brand: brand.clone(),
                count,
            });
        }
    }
    let mut brand = build_poi_brand(&covisits)?;
    if params.k_brand > 0 {
        brand = keep_top_k_by_weight(&brand, params.k_brand)?;
    }
    graph.add_relation(brand)?;

    let adjacency = if cbgs.rows.iter().all(|r| r.neighbors.is_some()) {
        let pairs = cbgs
            .rows
            .iter()
            .flat_map(|r| {
                r.neighbors
                    .iter()
                    .flatten()
                    .map(move |n| (r.id.clone(), n.clone()))
            })
            .collect();
        Some(AdjacencyInput::Pairs(pairs))
    } else if cbgs.rows.iter().all(|r| r.polygon.is_some()) {
        Some(AdjacencyInput::Polygons(
            cbgs.rows.iter().map(|r| r.polygon.clone().unwrap_or_default()).collect(),
        ))
    } else {
        None
    };
    match adjacency {
        Some(input) => graph.add_relation(build_cbg_adjacency(&graph.cbgs, &input)?)?,
        None => {
            log::warn!("no CBG neighbor lists or polygons given; adjacency relation is empty");
            graph.add_relation(Relation::new(RelationKind::CbgAdjacentCbg, Vec::new(), None)?)?;
        }
    }

    let mut visits = Vec::new();
    for (i, p) in pois.iter().enumerate() {
        for (origin, &count) in &p.visits {
            visits.push(VisitRecord {
                cbg: graph.cbgs.resolve(origin)?,
                poi: i,
                count,
            });
        }
    }
    let candidates = attach_visit_labels(&graph, &visits)?;
    let split = make_split(graph.n_poi(), params.split_seed)?;
    let train_rows = split.indices(crate::training::SplitLabel::Train);
    let poi_norm = NormStats::fit(&graph.poi_features, &train_rows, &poi_manifest.standardized())?;
    let all_cbgs: Vec<usize> = (0..graph.n_cbg()).collect();
    let cbg_norm = NormStats::fit(&graph.cbg_features, &all_cbgs, &cbg_manifest.standardized())?;

    let bundle = Bundle {
        graph,
        candidates,
        split,
        poi_schema: poi_manifest,
        cbg_schema: cbg_manifest,
        poi_norm,
        cbg_norm,
    };
    bundle.validate()?;
    Ok(bundle)
}
