//! Versioned parameter checkpoints: a manifest with the model description and
//! parameter shapes, plus the raw parameter values.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{InputDims, ModelConfig, PairwiseMlp, Scorer, VisitHgnn};
use crate::archive::{ArchiveReader, ArchiveWriter};
use crate::error::{Error, Result};
use crate::layers::Params;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"VHGNNCKP";
const KIND: &str = "checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to rebuild a predictor apart from its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ModelSpec {
    Visithgnn { config: ModelConfig, dims: InputDims },
    Mlp { d_cbg_in: usize, d_poi_in: usize, widths: Vec<usize>, dropout: f64 },
    /// Exponential distance decay with one fitted scale in metres.
    KnnGeo { lambda_m: f64 },
}

impl ModelSpec {
    pub fn method(&self) -> &'static str {
        match self {
            ModelSpec::Visithgnn { .. } => "visithgnn",
            ModelSpec::Mlp { .. } => "mlp",
            ModelSpec::KnnGeo { .. } => "knn_geo",
        }
    }

    /// Trainable scorer for this spec; `None` for closed-form baselines.
    pub fn scorer(&self) -> Result<Option<Box<dyn Scorer>>> {
        Ok(match self {
            ModelSpec::Visithgnn { config, dims } => Some(Box::new(VisitHgnn::new(config.clone(), dims.clone())?)),
            ModelSpec::Mlp {
                d_cbg_in,
                d_poi_in,
                widths,
                dropout,
            } => Some(Box::new(PairwiseMlp::new(*d_cbg_in, *d_poi_in, widths, *dropout))),
            ModelSpec::KnnGeo { .. } => None,
        })
    }

    /// sha256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    /// Content hash of the bundle the parameters were fitted on.
    pub bundle_hash: String,
    /// Candidate-set size used in training and evaluation.
    pub k: usize,
    pub best_epoch: usize,
    pub params: Params,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    spec: ModelSpec,
    bundle_hash: String,
    k: usize,
    best_epoch: usize,
    shapes: BTreeMap<String, Vec<usize>>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = CheckpointMeta {
            spec: self.spec.clone(),
            bundle_hash: self.bundle_hash.clone(),
            k: self.k,
            best_epoch: self.best_epoch,
            shapes: self.params.iter().map(|(k, t)| (k.clone(), t.shape().to_vec())).collect(),
        };
        let mut w = ArchiveWriter::new(KIND, CHECKPOINT_VERSION, &meta)?;
        for (k, t) in self.params.iter() {
            w.f64s(&format!("p/{k}"), t.data());
        }
        w.to_bytes(MAGIC)
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let r = ArchiveReader::from_bytes(bytes, MAGIC, KIND, CHECKPOINT_VERSION, origin)?;
        let m: CheckpointMeta = r.meta()?;
        let mut params = Params::new();
        for (k, shape) in m.shapes {
            let data = r.f64s(&format!("p/{k}"))?;
            let t = Tensor::new(shape, data).map_err(|e| Error::Corrupt {
                path: origin.into(),
                reason: format!("parameter {k}: {e}"),
            })?;
            params.insert(k, t);
        }
        let ck = Checkpoint {
            spec: m.spec,
            bundle_hash: m.bundle_hash,
            k: m.k,
            best_epoch: m.best_epoch,
            params,
        };
        ck.check_params()?;
        Ok(ck)
    }

    /// Parameter paths and shapes agree with a fresh initialization of its model description.
    pub fn check_params(&self) -> Result<()> {
        let Some(s) = self.spec.scorer()? else {
            return if self.params.is_empty() {
                Ok(())
            } else {
                Err(Error::IncompatibleBundle("closed-form baseline carries parameters".into()))
            };
        };
        let fresh = s.init_params(0);
        let want: Vec<_> = fresh.iter().map(|(k, t)| (k, t.shape())).collect();
        let have: Vec<_> = self.params.iter().map(|(k, t)| (k, t.shape())).collect();
        if want != have {
            return Err(Error::IncompatibleBundle(
                "checkpoint parameters do not match the model description".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}
