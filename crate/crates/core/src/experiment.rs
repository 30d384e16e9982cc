//! End-to-end fitting and evaluation of the three methods on one bundle.

use serde::{Deserialize, Serialize};

use crate::baselines::KnnGeo;
use crate::error::{Error, Result};
use crate::graph::bundle::Bundle;
use crate::graph::CandidateTable;
use crate::layers::Params;
use crate::metrics::{evaluate, MetricReport};
use crate::model::checkpoint::ModelSpec;
use crate::model::{Checkpoint, GraphInputs, InputDims};
use crate::training::{predict_rows, train, truncate_candidates, SplitAssignment, SplitLabel, TrainConfig, TrainReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Visithgnn,
    Mlp,
    KnnGeo,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Visithgnn, Method::Mlp, Method::KnnGeo];

    pub fn name(self) -> &'static str {
        match self {
            Method::Visithgnn => "visithgnn",
            Method::Mlp => "mlp",
            Method::KnnGeo => "knn_geo",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown method `{s}` (expected visithgnn, mlp or knn_geo)")))
    }
}

/// Model inputs and the frozen `K`-candidate table for one bundle.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub bundle_hash: String,
    pub inputs: GraphInputs,
    pub cands: CandidateTable,
    pub split: SplitAssignment,
    pub poi_ids: Vec<String>,
    pub cbg_ids: Vec<String>,
}

impl Prepared {
    pub fn new(bundle: &Bundle, k: usize) -> Result<Self> {
        Ok(Prepared {
            bundle_hash: bundle.content_hash()?,
            inputs: GraphInputs::from_bundle(bundle)?,
            cands: truncate_candidates(&bundle.candidates, k)?,
            split: bundle.split.clone(),
            poi_ids: bundle.graph.pois.ids().to_vec(),
            cbg_ids: bundle.graph.cbgs.ids().to_vec(),
        })
    }

    pub fn rows(&self, split: SplitLabel) -> Vec<usize> {
        self.split.indices(split)
    }
}

pub struct Fitted {
    pub checkpoint: Checkpoint,
    /// Per-epoch history for trained methods.
    pub report: Option<TrainReport>,
}

pub fn spec_for(method: Method, cfg: &TrainConfig, inputs: &GraphInputs) -> ModelSpec {
    match method {
        Method::Visithgnn => ModelSpec::Visithgnn {
            config: cfg.model.clone(),
            dims: InputDims::of(inputs),
        },
        Method::Mlp => ModelSpec::Mlp {
            d_cbg_in: inputs.cbg_x.cols(),
            d_poi_in: inputs.poi_x.cols(),
            widths: cfg.model.head_widths.clone(),
            dropout: cfg.model.dropout,
        },
        Method::KnnGeo => ModelSpec::KnnGeo { lambda_m: 1.0 },
    }
}

/// Trains (or fits, for KNN-Geo) on the train split.
pub fn fit(method: Method, prep: &Prepared, cfg: &TrainConfig) -> Result<Fitted> {
    cfg.validate()?;
    if prep.cands.k != cfg.k() {
        return Err(Error::param("k", "prepared candidates and config disagree on K"));
    }
    let spec = spec_for(method, cfg, &prep.inputs);
    let base = |spec: ModelSpec, params: Params, best_epoch: usize| Checkpoint {
        spec,
        bundle_hash: prep.bundle_hash.clone(),
        k: prep.cands.k,
        best_epoch,
        params,
    };
    if method == Method::KnnGeo {
        let (m, _) = KnnGeo::fit(&prep.cands, &prep.rows(SplitLabel::Train), &KnnGeo::default_grid())?;
        return Ok(Fitted {
            checkpoint: base(ModelSpec::KnnGeo { lambda_m: m.lambda_m }, Params::new(), 0),
            report: None,
        });
    }
    let scorer = spec.scorer()?.expect("trainable method");
    let out = train(scorer.as_ref(), &prep.inputs, &prep.cands, &prep.split, cfg)?;
    Ok(Fitted {
        checkpoint: base(spec, out.params, out.report.best_epoch),
        report: Some(out.report),
    })
}

/// Eval-mode probabilities for `rows`.
pub fn predict(ck: &Checkpoint, prep: &Prepared, rows: &[usize]) -> Result<Vec<f64>> {
    if ck.k != prep.cands.k {
        return Err(Error::IncompatibleBundle(format!(
            "checkpoint was trained with K={}, candidates have K={}",
            ck.k, prep.cands.k
        )));
    }
    match &ck.spec {
        ModelSpec::KnnGeo { lambda_m } => KnnGeo::new(*lambda_m)?.predict(&prep.cands, rows),
        spec => {
            let scorer = spec.scorer()?.expect("trainable method");
            predict_rows(scorer.as_ref(), &ck.params, &prep.inputs, &prep.cands, rows)
        }
    }
}

pub fn evaluate_split(ck: &Checkpoint, prep: &Prepared, split: SplitLabel) -> Result<(MetricReport, Vec<f64>)> {
    let rows = prep.rows(split);
    let probs = predict(ck, prep, &rows)?;
    let report = evaluate(ck.spec.method(), split.name(), &prep.cands, &probs, &rows)?;
    Ok((report, probs))
}
