use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{masked_kl_loss, supervised_rows, LossMode};
use super::{Adam, SplitAssignment, SplitLabel, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::CandidateTable;
use crate::layers::Params;
use crate::metrics::evaluate;
use crate::model::{GraphInputs, Scorer};
use crate::tensor::Tape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_kl: f64,
    pub val_mae: f64,
    pub val_top1: f64,
    pub best_val_kl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub method: String,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_kl: f64,
    pub n_train: usize,
    pub n_val: usize,
    /// Training rows left out of the loss for lack of target mass.
    pub excluded_train_rows: usize,
    pub stopped_early: bool,
    #[serde(skip)]
    pub wall_clock_s: f64,
}

impl TrainReport {
    /// One JSON object per epoch followed by a summary line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for e in &self.epochs {
            writeln!(f, "{}", serde_json::to_string(e)?).map_err(|e| Error::io(path, e))?;
        }
        let summary = serde_json::json!({
            "summary": {
                "method": self.method,
                "seed": self.seed,
                "best_epoch": self.best_epoch,
                "best_val_kl": self.best_val_kl,
                "epochs_run": self.epochs.len(),
                "n_train": self.n_train,
                "n_val": self.n_val,
                "excluded_train_rows": self.excluded_train_rows,
                "stopped_early": self.stopped_early,
            }
        });
        writeln!(f, "{summary}").map_err(|e| Error::io(path, e))
    }

    /// Training-curve data: one row per epoch.
    pub fn write_curves_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record(["method", "epoch", "train_loss", "val_loss", "val_kl", "best_val_kl", "val_mae", "val_top1"])?;
        for e in &self.epochs {
            w.write_record([
                self.method.clone(),
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.val_loss.to_string(),
                e.val_kl.to_string(),
                e.best_val_kl.to_string(),
                e.val_mae.to_string(),
                e.val_top1.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub params: Params,
    pub report: TrainReport,
}

/// Eval-mode probabilities for `rows`, row-major `rows.len() x K`.
pub fn predict_rows(
    scorer: &dyn Scorer,
    params: &Params,
    inputs: &GraphInputs,
    cands: &CandidateTable,
    rows: &[usize],
) -> Result<Vec<f64>> {
    let mut t = Tape::new();
    let b = params.bind(&mut t);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = scorer.forward(&mut t, &b, inputs, cands, rows, false, &mut rng)?;
    Ok(t.value(p).data().to_vec())
}

/// Training-mode loss over `rows` and its gradient for every parameter.
pub fn loss_and_grads(
    scorer: &dyn Scorer,
    params: &Params,
    inputs: &GraphInputs,
    cands: &CandidateTable,
    rows: &[usize],
    mode: LossMode,
    rng: &mut dyn RngCore,
) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
    let mut t = Tape::new();
    let b = params.bind(&mut t);
    let probs = scorer.forward(&mut t, &b, inputs, cands, rows, true, rng)?;
    let (loss, _) = masked_kl_loss(&mut t, probs, cands, rows, mode)?;
    let value = t.value(loss).data()[0];
    t.backward(loss)?;
    Ok((value, b.grads(&t)))
}

fn divergence(epoch: usize, seed: u64, reason: impl Into<String>) -> Error {
    Error::Divergence {
        epoch,
        seed,
        reason: reason.into(),
    }
}

/// Full-graph training on the train split with early stopping on val KL.
/// `cands` must already be truncated to the configured `K`.
pub fn train(
    scorer: &dyn Scorer,
    inputs: &GraphInputs,
    cands: &CandidateTable,
    split: &SplitAssignment,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_from(scorer, scorer.init_params(cfg.seed), inputs, cands, split, cfg)
}

pub fn train_from(
    scorer: &dyn Scorer,
    mut params: Params,
    inputs: &GraphInputs,
    cands: &CandidateTable,
    split: &SplitAssignment,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cands.k != cfg.k() {
        return Err(Error::param("k", format!("candidate table has K={}, config asks for {}", cands.k, cfg.k())));
    }
    if split.labels.len() != cands.n_rows() {
        return Err(Error::validation("split does not cover every POI"));
    }
    let start = Instant::now();
    let train_rows = split.indices(SplitLabel::Train);
    let val_rows = supervised_rows(cands, &split.indices(SplitLabel::Val));
    let sup_train = supervised_rows(cands, &train_rows);
    if sup_train.is_empty() || val_rows.is_empty() {
        return Err(Error::validation("train and val splits both need labeled POIs"));
    }
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let mut opt = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut best = params.clone();
    let mut best_kl = f64::INFINITY;
    let mut best_epoch = 0;
    let mut epochs = Vec::new();
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        let (train_loss, grads) =
            loss_and_grads(scorer, &params, inputs, cands, &sup_train, cfg.loss, &mut dropout_rng)?;
        if !train_loss.is_finite() {
            return Err(divergence(epoch, cfg.seed, format!("training loss is {train_loss}")));
        }
        if let Some((k, _)) = grads.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
            return Err(divergence(epoch, cfg.seed, format!("non-finite gradient in `{k}`")));
        }
        opt.step(&mut params, &grads)?;

        let mut tv = Tape::new();
        let bv = params.bind(&mut tv);
        let mut eval_rng = ChaCha8Rng::seed_from_u64(0);
        let vp = scorer.forward(&mut tv, &bv, inputs, cands, &val_rows, false, &mut eval_rng)?;
        let (vl, _) = masked_kl_loss(&mut tv, vp, cands, &val_rows, cfg.loss)?;
        let val_loss = tv.value(vl).data()[0];
        let m = evaluate(scorer.name(), "val", cands, tv.value(vp).data(), &val_rows)?;
        if !m.kl.is_finite() {
            return Err(divergence(epoch, cfg.seed, format!("validation KL is {}", m.kl)));
        }
        if m.kl < best_kl {
            best_kl = m.kl;
            best_epoch = epoch;
            best = params.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        log::debug!("{} epoch {epoch}: train {train_loss:.6} val kl {:.6}", scorer.name(), m.kl);
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_kl: m.kl,
            val_mae: m.mae,
            val_top1: m.top1,
            best_val_kl: best_kl,
        });
        if stale >= cfg.patience {
            break;
        }
    }
    let stopped_early = epochs.len() < cfg.max_epochs;
    Ok(TrainOutcome {
        params: best,
        report: TrainReport {
            method: scorer.name().to_string(),
            seed: cfg.seed,
            epochs,
            best_epoch,
            best_val_kl: best_kl,
            n_train: sup_train.len(),
            n_val: val_rows.len(),
            excluded_train_rows: train_rows.len() - sup_train.len(),
            stopped_early,
            wall_clock_s: start.elapsed().as_secs_f64(),
        },
    })
}
