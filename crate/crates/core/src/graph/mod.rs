//! Typed POI/CBG graph, relation builders and the portable bundle format.

pub mod assemble;
pub mod builders;
pub mod bundle;
pub mod geo;
pub mod input;
pub mod labels;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
pub use geo::{bearing_deg, haversine_km, GeoPoint, LocalProjection};
pub use labels::CandidateTable;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    Poi,
    Cbg,
}

/// Ordered, unique external ids for one node type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSet {
    pub node_type: NodeType,
    ids: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl NodeSet {
    pub fn new(node_type: NodeType, ids: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate {node_type:?} id `{id}`")));
            }
        }
        Ok(NodeSet { node_type, ids, index })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn count(&self) -> usize {
        self.ids.len()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn resolve(&self, id: &str) -> Result<usize> {
        self.index_of(id)
            .ok_or_else(|| Error::validation(format!("unknown {:?} id `{id}`", self.node_type)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    CbgAdjacentCbg,
    PoiBelongCbg,
    PoiKnnCbg,
    PoiGeoKnnPoi,
    PoiTimeSimPoi,
    PoiBrandPoi,
    CbgVisitPoi,
}

impl RelationKind {
    pub const POI_POI: [RelationKind; 3] = [
        RelationKind::PoiGeoKnnPoi,
        RelationKind::PoiTimeSimPoi,
        RelationKind::PoiBrandPoi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RelationKind::CbgAdjacentCbg => "cbg_adjacent_cbg",
            RelationKind::PoiBelongCbg => "poi_belong_cbg",
            RelationKind::PoiKnnCbg => "poi_knn_cbg",
            RelationKind::PoiGeoKnnPoi => "poi_geo_knn_poi",
            RelationKind::PoiTimeSimPoi => "poi_time_sim_poi",
            RelationKind::PoiBrandPoi => "poi_brand_poi",
            RelationKind::CbgVisitPoi => "cbg_visit_poi",
        }
    }

    pub fn endpoints(self) -> (NodeType, NodeType) {
        match self {
            RelationKind::CbgAdjacentCbg => (NodeType::Cbg, NodeType::Cbg),
            RelationKind::PoiBelongCbg | RelationKind::PoiKnnCbg => (NodeType::Poi, NodeType::Cbg),
            RelationKind::CbgVisitPoi => (NodeType::Cbg, NodeType::Poi),
            _ => (NodeType::Poi, NodeType::Poi),
        }
    }

    /// Visit edges carry supervision only.
    pub fn is_message_passing(self) -> bool {
        self != RelationKind::CbgVisitPoi
    }

    /// Same-type relations are stored with both directions; cross-type
    /// relations keep the POI -> CBG direction and are traversed both ways.
    pub fn is_homogeneous(self) -> bool {
        let (s, d) = self.endpoints();
        s == d
    }
}

/// Per-edge attribute block, row-major `edges x columns`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeAttrs {
    pub columns: Vec<String>,
    pub values: Vec<f64>,
}

impl EdgeAttrs {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, e: usize) -> &[f64] {
        let d = self.dim();
        &self.values[e * d..(e + 1) * d]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub kind: RelationKind,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub attrs: Option<EdgeAttrs>,
}

impl Relation {
    pub fn new(kind: RelationKind, edges: Vec<(usize, usize)>, attrs: Option<EdgeAttrs>) -> Result<Self> {
        let (src, dst) = edges.into_iter().unzip();
        let r = Relation { kind, src, dst, attrs };
        if let Some(a) = &r.attrs {
            if a.values.len() != a.dim() * r.src.len() {
                return Err(Error::validation(format!(
                    "{}: attribute block has {} values for {} edges of width {}",
                    kind.name(),
                    a.values.len(),
                    r.src.len(),
                    a.dim()
                )));
            }
        }
        Ok(r)
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }

    pub fn attr_dim(&self) -> usize {
        self.attrs.as_ref().map_or(0, EdgeAttrs::dim)
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.src.iter().copied().zip(self.dst.iter().copied())
    }

    /// Edge `(u, v)` present iff `(v, u)` present.
    pub fn is_symmetric(&self) -> bool {
        let set: BTreeSet<(usize, usize)> = self.edges().collect();
        set.iter().all(|&(u, v)| set.contains(&(v, u)))
    }

    pub fn has_self_loops(&self) -> bool {
        self.kind.is_homogeneous() && self.edges().any(|(u, v)| u == v)
    }

    fn validate(&self, n_src: usize, n_dst: usize) -> Result<()> {
        let name = self.kind.name();
        if self.src.len() != self.dst.len() {
            return Err(Error::validation(format!("{name}: ragged edge list")));
        }
        for (u, v) in self.edges() {
            if u >= n_src || v >= n_dst {
                return Err(Error::validation(format!("{name}: edge ({u}, {v}) out of range")));
            }
        }
        if self.has_self_loops() {
            return Err(Error::validation(format!("{name}: self-loop")));
        }
        if let Some(a) = &self.attrs {
            if a.values.len() != a.dim() * self.num_edges() {
                return Err(Error::validation(format!("{name}: attribute width differs across edges")));
            }
            if a.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("{name}: non-finite edge attribute")));
            }
        }
        if self.kind.is_homogeneous() && (!self.is_symmetric() || self.num_edges() % 2 != 0) {
            return Err(Error::validation(format!("{name}: not symmetrized")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphMetadata {
    pub region: String,
    pub week: String,
    pub schema_version: u32,
    pub poi_schema_hash: String,
    pub cbg_schema_hash: String,
    pub text_mode: String,
    pub build_params: BTreeMap<String, String>,
}

/// POI and CBG node sets with coordinates, features and message-passing relations.
#[derive(Clone, Debug, PartialEq)]
pub struct HeteroGraph {
    pub pois: NodeSet,
    pub cbgs: NodeSet,
    pub poi_geo: Vec<GeoPoint>,
    pub cbg_geo: Vec<GeoPoint>,
    pub projection: LocalProjection,
    pub poi_xy: Vec<[f64; 2]>,
    pub cbg_xy: Vec<[f64; 2]>,
    /// Home CBG of each POI.
    pub home_cbg: Vec<usize>,
    pub poi_features: FeatureMatrix,
    pub cbg_features: FeatureMatrix,
    relations: BTreeMap<RelationKind, Relation>,
    pub metadata: GraphMetadata,
}

impl HeteroGraph {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        pois: NodeSet,
        cbgs: NodeSet,
        poi_geo: Vec<GeoPoint>,
        cbg_geo: Vec<GeoPoint>,
        projection: LocalProjection,
        home_cbg: Vec<usize>,
        poi_features: FeatureMatrix,
        cbg_features: FeatureMatrix,
        metadata: GraphMetadata,
    ) -> Result<Self> {
        let poi_xy = poi_geo.iter().map(|&p| projection.project(p)).collect();
        let cbg_xy = cbg_geo.iter().map(|&p| projection.project(p)).collect();
        let g = HeteroGraph {
            pois,
            cbgs,
            poi_geo,
            cbg_geo,
            projection,
            poi_xy,
            cbg_xy,
            home_cbg,
            poi_features,
            cbg_features,
            relations: BTreeMap::new(),
            metadata,
        };
        g.validate_nodes()?;
        Ok(g)
    }

    pub fn n_poi(&self) -> usize {
        self.pois.count()
    }

    pub fn n_cbg(&self) -> usize {
        self.cbgs.count()
    }

    fn count(&self, t: NodeType) -> usize {
        match t {
            NodeType::Poi => self.n_poi(),
            NodeType::Cbg => self.n_cbg(),
        }
    }

    pub fn add_relation(&mut self, rel: Relation) -> Result<()> {
        if !rel.kind.is_message_passing() {
            return Err(Error::validation(
                "cbg_visit_poi is supervision only and cannot be registered for message passing",
            ));
        }
        let (s, d) = rel.kind.endpoints();
        rel.validate(self.count(s), self.count(d))?;
        self.relations.insert(rel.kind, rel);
        Ok(())
    }

    pub fn relation(&self, kind: RelationKind) -> Option<&Relation> {
        self.relations.get(&kind)
    }

    pub fn relations(&self) -> impl Iterator<Item = &Relation> {
        self.relations.values()
    }

    fn validate_nodes(&self) -> Result<()> {
        if self.poi_geo.len() != self.n_poi() || self.cbg_geo.len() != self.n_cbg() {
            return Err(Error::validation("every node needs coordinates"));
        }
        for p in self.poi_geo.iter().chain(&self.cbg_geo) {
            p.validate()?;
        }
        if self.home_cbg.len() != self.n_poi() || self.home_cbg.iter().any(|&c| c >= self.n_cbg()) {
            return Err(Error::validation("home CBG assignment incomplete"));
        }
        if self.poi_features.rows() != self.n_poi() || self.cbg_features.rows() != self.n_cbg() {
            return Err(Error::validation("feature rows do not match node counts"));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_nodes()?;
        for r in self.relations.values() {
            let (s, d) = r.kind.endpoints();
            r.validate(self.count(s), self.count(d))?;
        }
        Ok(())
    }
}
