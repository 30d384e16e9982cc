use crate::error::{Error, Result};
use crate::features::standardize_edge_attrs;
use crate::graph::bundle::Bundle;
use crate::graph::{HeteroGraph, Relation, RelationKind};
use crate::tensor::Tensor;

/// Directed edge list with optional standardized attributes (`edges x d`).
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSet {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub attrs: Option<Tensor>,
}

impl EdgeSet {
    pub fn new(src: Vec<usize>, dst: Vec<usize>, attrs: Option<Tensor>) -> Result<Self> {
        if src.len() != dst.len() || attrs.as_ref().is_some_and(|a| a.rows() != src.len()) {
            return Err(Error::validation("edge set columns have different lengths"));
        }
        Ok(EdgeSet { src, dst, attrs })
    }

    pub fn empty() -> Self {
        EdgeSet {
            src: Vec::new(),
            dst: Vec::new(),
            attrs: None,
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn attr_dim(&self) -> usize {
        self.attrs.as_ref().map_or(0, Tensor::cols)
    }

    /// Same edges traversed the other way.
    pub fn reversed(&self) -> Self {
        EdgeSet {
            src: self.dst.clone(),
            dst: self.src.clone(),
            attrs: self.attrs.clone(),
        }
    }

    fn from_relation(r: &Relation) -> Result<Self> {
        let attrs = match &r.attrs {
            Some(a) if a.dim() > 0 => {
                let (std, _) = standardize_edge_attrs(a);
                Some(Tensor::new(vec![r.num_edges(), a.dim()], std.values)?)
            }
            _ => None,
        };
        EdgeSet::new(r.src.clone(), r.dst.clone(), attrs)
    }
}

/// Label-free model inputs: normalized node features and message-passing
/// edges with per-relation standardized attributes. Cross-type sets keep
/// the POI -> CBG direction.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphInputs {
    pub poi_x: Tensor,
    pub cbg_x: Tensor,
    pub cbg_adj: EdgeSet,
    pub geo_knn: EdgeSet,
    pub time_sim: EdgeSet,
    pub brand: EdgeSet,
    pub belong: EdgeSet,
    pub knn: EdgeSet,
}

impl GraphInputs {
    pub fn n_poi(&self) -> usize {
        self.poi_x.rows()
    }

    pub fn n_cbg(&self) -> usize {
        self.cbg_x.rows()
    }

    pub fn pp(&self, kind: RelationKind) -> &EdgeSet {
        match kind {
            RelationKind::PoiGeoKnnPoi => &self.geo_knn,
            RelationKind::PoiTimeSimPoi => &self.time_sim,
            _ => &self.brand,
        }
    }

    pub fn from_graph(graph: &HeteroGraph, poi_x: Tensor, cbg_x: Tensor) -> Result<Self> {
        if poi_x.rows() != graph.n_poi() || cbg_x.rows() != graph.n_cbg() {
            return Err(Error::validation("feature rows do not match node counts"));
        }
        let get = |k: RelationKind| -> Result<EdgeSet> {
            match graph.relation(k) {
                Some(r) => EdgeSet::from_relation(r),
                None => Ok(EdgeSet::empty()),
            }
        };
        Ok(GraphInputs {
            poi_x,
            cbg_x,
            cbg_adj: get(RelationKind::CbgAdjacentCbg)?,
            geo_knn: get(RelationKind::PoiGeoKnnPoi)?,
            time_sim: get(RelationKind::PoiTimeSimPoi)?,
            brand: get(RelationKind::PoiBrandPoi)?,
            belong: get(RelationKind::PoiBelongCbg)?,
            knn: get(RelationKind::PoiKnnCbg)?,
        })
    }

    pub fn from_bundle(b: &Bundle) -> Result<Self> {
        let p = b.normalized_poi_features()?;
        let c = b.normalized_cbg_features()?;
        let poi_x = Tensor::new(vec![p.rows(), p.width()], p.data().to_vec())?;
        let cbg_x = Tensor::new(vec![c.rows(), c.width()], c.data().to_vec())?;
        Self::from_graph(&b.graph, poi_x, cbg_x)
    }

    pub fn validate(&self) -> Result<()> {
        let (np, nc) = (self.n_poi(), self.n_cbg());
        let check = |e: &EdgeSet, ns: usize, nd: usize, name: &str| -> Result<()> {
            if e.src.iter().any(|&s| s >= ns) || e.dst.iter().any(|&d| d >= nd) {
                return Err(Error::validation(format!("{name}: edge index out of range")));
            }
            Ok(())
        };
        check(&self.cbg_adj, nc, nc, "cbg_adjacent_cbg")?;
        check(&self.geo_knn, np, np, "poi_geo_knn_poi")?;
        check(&self.time_sim, np, np, "poi_time_sim_poi")?;
        check(&self.brand, np, np, "poi_brand_poi")?;
        check(&self.belong, np, nc, "poi_belong_cbg")?;
        check(&self.knn, np, nc, "poi_knn_cbg")
    }
}
