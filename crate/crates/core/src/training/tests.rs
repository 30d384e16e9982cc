use super::*;
use crate::model::{InputDims, ModelConfig, PairwiseMlp, Scorer, VisitHgnn};
use crate::synth::random_toy;

fn small_model() -> ModelConfig {
    ModelConfig {
        d_cbg: 8,
        d_poi: 8,
        d_hid: 8,
        d_e: 4,
        dropout: 0.0,
        k: 3,
        head_widths: vec![16, 1],
        ..ModelConfig::default()
    }
}

fn split_of(labels: &[SplitLabel]) -> SplitAssignment {
    SplitAssignment {
        seed: 0,
        labels: labels.to_vec(),
    }
}

fn toy_split(n: usize) -> SplitAssignment {
    let mut l = vec![SplitLabel::Train; n];
    l[n - 1] = SplitLabel::Val;
    l[n - 2] = SplitLabel::Val;
    l[0] = SplitLabel::Test;
    split_of(&l)
}

#[test]
fn zero_lr_keeps_parameters() {
    let toy = random_toy(1, 8, 5, 3, 4, 3);
    let model = VisitHgnn::new(small_model(), InputDims::of(&toy.inputs)).unwrap();
    let cfg = TrainConfig {
        lr: 0.0,
        max_epochs: 5,
        model: small_model(),
        ..TrainConfig::default()
    };
    let out = train(&model, &toy.inputs, &toy.candidates, &toy_split(8), &cfg).unwrap();
    assert_eq!(out.params, model.init_params(cfg.seed));
    let l0 = out.report.epochs[0].train_loss;
    assert!(out.report.epochs.iter().all(|e| e.train_loss == l0));
    assert_eq!(out.report.best_epoch, 1);
}

fn separable() -> (crate::synth::ToyGraph, SplitAssignment) {
    let mut toy = random_toy(2, 3, 2, 2, 4, 3);
    let c = &mut toy.candidates;
    c.mask = vec![true; 6];
    c.cbg = vec![0, 1, 1, 0, 0, 1];
    c.target = vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
    (toy, split_of(&[SplitLabel::Train, SplitLabel::Train, SplitLabel::Val]))
}

fn fits_separable_toy(scorer: &dyn Scorer, k: usize) {
    let (toy, split) = separable();
    let cfg = TrainConfig {
        lr: 1e-2,
        max_epochs: 500,
        patience: 500,
        loss: LossMode::PerPoi,
        model: ModelConfig { k, ..small_model() },
        ..TrainConfig::default()
    };
    let out = train(scorer, &toy.inputs, &toy.candidates, &split, &cfg).unwrap();
    let last = out.report.epochs.last().unwrap().train_loss;
    assert!(last < 0.01, "train loss {last}");
}

#[test]
fn separable_toy_is_fitted() {
    let (toy, _) = separable();
    let model = VisitHgnn::new(ModelConfig { k: 2, ..small_model() }, InputDims::of(&toy.inputs)).unwrap();
    fits_separable_toy(&model, 2);
    let mlp = PairwiseMlp::new(3, 4, &[16, 1], 0.0);
    fits_separable_toy(&mlp, 2);
}

#[test]
fn early_stopping_returns_best_epoch() {
    let toy = random_toy(3, 10, 6, 3, 4, 3);
    let model = VisitHgnn::new(small_model(), InputDims::of(&toy.inputs)).unwrap();
    let cfg = TrainConfig {
        lr: 3e-2,
        max_epochs: 200,
        patience: 5,
        model: ModelConfig {
            dropout: 0.2,
            ..small_model()
        },
        ..TrainConfig::default()
    };
    let model = VisitHgnn::new(cfg.model.clone(), model.dims.clone()).unwrap();
    let split = toy_split(10);
    let out = train(&model, &toy.inputs, &toy.candidates, &split, &cfg).unwrap();
    let r = &out.report;
    assert!(r.stopped_early);
    for w in r.epochs.windows(2) {
        assert!(w[1].best_val_kl <= w[0].best_val_kl);
    }
    let min = r.epochs.iter().map(|e| e.val_kl).fold(f64::INFINITY, f64::min);
    assert_eq!(r.best_val_kl, min);
    assert_eq!(r.epochs[r.best_epoch - 1].val_kl, min);
    assert_eq!(r.epochs.len(), r.best_epoch + cfg.patience);

    let val = loss::supervised_rows(&toy.candidates, &split.indices(SplitLabel::Val));
    let p = predict_rows(&model, &out.params, &toy.inputs, &toy.candidates, &val).unwrap();
    let m = crate::metrics::evaluate("visithgnn", "val", &toy.candidates, &p, &val).unwrap();
    assert_eq!(m.kl, r.best_val_kl);
}

#[test]
fn training_is_deterministic() {
    let toy = random_toy(4, 8, 5, 3, 4, 3);
    let cfg = TrainConfig {
        max_epochs: 10,
        model: ModelConfig {
            dropout: 0.3,
            ..small_model()
        },
        ..TrainConfig::default()
    };
    let model = VisitHgnn::new(cfg.model.clone(), InputDims::of(&toy.inputs)).unwrap();
    let a = train(&model, &toy.inputs, &toy.candidates, &toy_split(8), &cfg).unwrap();
    let b = train(&model, &toy.inputs, &toy.candidates, &toy_split(8), &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.report.epochs, b.report.epochs);
}

#[test]
fn search_is_reproducible_and_sorted() {
    let space = SearchSpace::default();
    let base = TrainConfig::default();
    let f = |_: usize, c: &TrainConfig| Ok(c.lr * c.model.k as f64);
    let one = random_search(&space, &base, 1, 7, f).unwrap();
    assert_eq!(one.trials.len(), 1);
    assert_eq!(one.best().index, 0);
    let a = random_search(&space, &base, 12, 7, f).unwrap();
    let b = random_search(&space, &base, 12, 7, f).unwrap();
    assert_eq!(a, b);
    for w in a.trials.windows(2) {
        assert!(w[0].val_kl <= w[1].val_kl);
    }
    for t in &a.trials {
        assert!(space.k.contains(&t.config.model.k));
        assert_eq!(t.config.model.k % 2, 0);
    }
    assert_ne!(a, random_search(&space, &base, 12, 8, f).unwrap());
}
