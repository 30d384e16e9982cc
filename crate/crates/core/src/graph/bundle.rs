//! Portable graph bundle: graph, full candidate table, split and feature statistics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::labels::CandidateTable;
use super::{EdgeAttrs, GeoPoint, GraphMetadata, HeteroGraph, LocalProjection, NodeSet, NodeType, Relation, RelationKind};
use crate::archive::{ArchiveReader, ArchiveWriter};
use crate::error::{Error, Result};
use crate::features::schema::SCHEMA_VERSION;
use crate::features::{FeatureMatrix, NormStats, SchemaManifest};
use crate::training::{SplitAssignment, SplitLabel};

const MAGIC: &[u8; 8] = b"VHGNNBDL";
const KIND: &str = "graph_bundle";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub graph: HeteroGraph,
    /// Every CBG per POI, nearest first.
    pub candidates: CandidateTable,
    pub split: SplitAssignment,
    pub poi_schema: SchemaManifest,
    pub cbg_schema: SchemaManifest,
    /// POI stats are fitted on training rows only.
    pub poi_norm: NormStats,
    pub cbg_norm: NormStats,
}

#[derive(Serialize, Deserialize)]
struct RelationMeta {
    kind: RelationKind,
    attr_columns: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    poi_ids: Vec<String>,
    cbg_ids: Vec<String>,
    projection: LocalProjection,
    metadata: GraphMetadata,
    poi_columns: Vec<String>,
    cbg_columns: Vec<String>,
    relations: Vec<RelationMeta>,
    candidate_k: usize,
    split_seed: u64,
    poi_schema: SchemaManifest,
    cbg_schema: SchemaManifest,
    poi_norm: NormStats,
    cbg_norm: NormStats,
}

fn flatten_geo(points: &[GeoPoint]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.lat, p.lon]).collect()
}

fn unflatten_geo(v: &[f64]) -> Vec<GeoPoint> {
    v.chunks_exact(2).map(|c| GeoPoint { lat: c[0], lon: c[1] }).collect()
}

fn split_code(l: SplitLabel) -> usize {
    l as usize
}

impl Bundle {
    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        self.candidates.validate()?;
        self.poi_schema.verify()?;
        self.cbg_schema.verify()?;
        self.graph.poi_features.conforms_to(&self.poi_schema)?;
        self.graph.cbg_features.conforms_to(&self.cbg_schema)?;
        if self.candidates.n_rows() != self.graph.n_poi() || self.split.labels.len() != self.graph.n_poi() {
            return Err(Error::validation("candidate table or split does not cover every POI"));
        }
        Ok(())
    }

    pub fn normalized_poi_features(&self) -> Result<FeatureMatrix> {
        self.poi_norm.apply(&self.graph.poi_features)
    }

    pub fn normalized_cbg_features(&self) -> Result<FeatureMatrix> {
        self.cbg_norm.apply(&self.graph.cbg_features)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let g = &self.graph;
        let meta = BundleMeta {
            poi_ids: g.pois.ids().to_vec(),
            cbg_ids: g.cbgs.ids().to_vec(),
            projection: g.projection,
            metadata: g.metadata.clone(),
            poi_columns: g.poi_features.columns.clone(),
            cbg_columns: g.cbg_features.columns.clone(),
            relations: g
                .relations()
                .map(|r| RelationMeta {
                    kind: r.kind,
                    attr_columns: r.attrs.as_ref().map(|a| a.columns.clone()),
                })
                .collect(),
            candidate_k: self.candidates.k,
            split_seed: self.split.seed,
            poi_schema: self.poi_schema.clone(),
            cbg_schema: self.cbg_schema.clone(),
            poi_norm: self.poi_norm.clone(),
            cbg_norm: self.cbg_norm.clone(),
        };
        let mut w = ArchiveWriter::new(KIND, BUNDLE_VERSION, &meta)?;
        w.f64s("poi_geo", &flatten_geo(&g.poi_geo));
        w.f64s("cbg_geo", &flatten_geo(&g.cbg_geo));
        w.usizes("home_cbg", &g.home_cbg);
        w.f64s("poi_features", g.poi_features.data());
        w.f64s("cbg_features", g.cbg_features.data());
        for r in g.relations() {
            let name = r.kind.name();
            w.usizes(&format!("rel/{name}/src"), &r.src);
            w.usizes(&format!("rel/{name}/dst"), &r.dst);
            if let Some(a) = &r.attrs {
                w.f64s(&format!("rel/{name}/attrs"), &a.values);
            }
        }
        let c = &self.candidates;
        w.usizes("cand/cbg", &c.cbg);
        w.f64s("cand/dist_m", &c.dist_m);
        w.bools("cand/mask", &c.mask);
        w.f64s("cand/target", &c.target);
        w.bools("cand/labeled", &c.labeled);
        w.f64s("cand/captured_mass", &c.captured_mass);
        let codes: Vec<usize> = self.split.labels.iter().map(|&l| split_code(l)).collect();
        w.usizes("split", &codes);
        w.to_bytes(MAGIC)
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let r = ArchiveReader::from_bytes(bytes, MAGIC, KIND, BUNDLE_VERSION, origin)?;
        let m: BundleMeta = r.meta()?;
        if m.metadata.schema_version != SCHEMA_VERSION {
            return Err(Error::IncompatibleBundle(format!(
                "{origin}: feature schema version {}, this build reads {SCHEMA_VERSION}",
                m.metadata.schema_version
            )));
        }
        m.poi_schema.verify()?;
        m.cbg_schema.verify()?;
        let pois = NodeSet::new(NodeType::Poi, m.poi_ids)?;
        let cbgs = NodeSet::new(NodeType::Cbg, m.cbg_ids)?;
        let (np, nc) = (pois.count(), cbgs.count());
        let poi_features = FeatureMatrix::new(m.poi_columns, np, r.f64s("poi_features")?)?;
        let cbg_features = FeatureMatrix::new(m.cbg_columns, nc, r.f64s("cbg_features")?)?;
        let mut graph = HeteroGraph::new(
            pois,
            cbgs,
            unflatten_geo(&r.f64s("poi_geo")?),
            unflatten_geo(&r.f64s("cbg_geo")?),
            m.projection,
            r.usizes("home_cbg")?,
            poi_features,
            cbg_features,
            m.metadata,
        )?;
        for rm in m.relations {
            let name = rm.kind.name();
            let src = r.usizes(&format!("rel/{name}/src"))?;
            let dst = r.usizes(&format!("rel/{name}/dst"))?;
            let attrs = match rm.attr_columns {
                Some(columns) => Some(EdgeAttrs {
                    columns,
                    values: r.f64s(&format!("rel/{name}/attrs"))?,
                }),
                None => None,
            };
            if src.len() != dst.len() {
                return Err(Error::validation(format!("{name}: ragged edge arrays")));
            }
            graph.add_relation(Relation::new(rm.kind, src.into_iter().zip(dst).collect(), attrs)?)?;
        }
        let candidates = CandidateTable {
            k: m.candidate_k,
            cbg: r.usizes("cand/cbg")?,
            dist_m: r.f64s("cand/dist_m")?,
            mask: r.bools("cand/mask")?,
            target: r.f64s("cand/target")?,
            labeled: r.bools("cand/labeled")?,
            captured_mass: r.f64s("cand/captured_mass")?,
        };
        let labels = r
            .usizes("split")?
            .into_iter()
            .map(|c| match c {
                0 => Ok(SplitLabel::Train),
                1 => Ok(SplitLabel::Val),
                2 => Ok(SplitLabel::Test),
                _ => Err(Error::validation(format!("bad split code {c}"))),
            })
            .collect::<Result<_>>()?;
        let b = Bundle {
            graph,
            candidates,
            split: SplitAssignment {
                seed: m.split_seed,
                labels,
            },
            poi_schema: m.poi_schema,
            cbg_schema: m.cbg_schema,
            poi_norm: m.poi_norm,
            cbg_norm: m.cbg_norm,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    /// sha256 of the serialized bundle.
    pub fn content_hash(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}
