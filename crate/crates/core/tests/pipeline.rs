//! Tables to bundle to checkpoint, end to end on small synthetic counties.

use std::collections::BTreeMap;

use visithgnn::experiment::{evaluate_split, fit, Method, Prepared};
use visithgnn::graph::assemble::{build_bundle, BuildParams};
use visithgnn::graph::bundle::Bundle;
use visithgnn::graph::RelationKind;
use visithgnn::model::Checkpoint;
use visithgnn::synth::{generate, SynthConfig, SynthCounty};
use visithgnn::training::{SplitLabel, TrainConfig};
use visithgnn::Error;

fn county(seed: u64) -> SynthCounty {
    generate(&SynthConfig {
        n_cbg: 36,
        n_poi: 80,
        extent_km: 6.0,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn quick_config() -> TrainConfig {
    let mut c = TrainConfig {
        lr: 3e-3,
        max_epochs: 8,
        patience: 3,
        ..TrainConfig::default()
    };
    c.model.d_cbg = 16;
    c.model.d_poi = 16;
    c.model.d_hid = 16;
    c.model.d_e = 4;
    c.model.k = 12;
    c.model.head_widths = vec![16, 1];
    c
}

#[test]
fn visit_counts_become_normalized_targets() {
    let mut c = county(0);
    c.pois[0].visits = BTreeMap::from([("cbg0000".to_string(), 3.0), ("cbg0001".to_string(), 1.0)]);
    c.pois[1].visits.clear();
    let b = build_bundle(&c.pois, &c.cbgs, &BuildParams::default()).unwrap();
    let cands = &b.candidates;
    let share = |row: usize, cbg: usize| {
        let j = cands.row_cbg(row).iter().position(|&x| x == cbg).unwrap();
        cands.row_target(row)[j]
    };
    assert_eq!(share(0, 0), 0.75);
    assert_eq!(share(0, 1), 0.25);
    assert_eq!(cands.row_target(0).iter().sum::<f64>(), 1.0);
    assert!(!cands.labeled[1]);
    assert!(cands.row_target(1).iter().all(|&v| v == 0.0));
    // candidates are ordered nearest first
    for r in 0..cands.n_rows() {
        assert!(cands.row_dist(r).windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn visits_never_enter_message_passing() {
    let c = county(1);
    let b = build_bundle(&c.pois, &c.cbgs, &BuildParams::default()).unwrap();
    assert!(b.graph.relation(RelationKind::CbgVisitPoi).is_none());
    assert!(b.graph.relations().all(|r| r.kind.is_message_passing()));
}

#[test]
fn duplicate_ids_are_rejected() {
    let mut c = county(2);
    c.pois[1].id = c.pois[0].id.clone();
    let err = build_bundle(&c.pois, &c.cbgs, &BuildParams::default()).unwrap_err();
    assert!(matches!(err, Error::Validation(_)), "{err}");
    let mut c = county(2);
    c.cbgs.rows[1].id = c.cbgs.rows[0].id.clone();
    assert!(build_bundle(&c.pois, &c.cbgs, &BuildParams::default()).is_err());
}

#[test]
fn unknown_visit_origin_is_rejected() {
    let mut c = county(3);
    c.pois[0].visits.insert("nowhere".into(), 2.0);
    assert!(build_bundle(&c.pois, &c.cbgs, &BuildParams::default()).is_err());
}

#[test]
fn rebuilds_are_byte_identical_and_round_trip() {
    let c = county(4);
    let a = build_bundle(&c.pois, &c.cbgs, &BuildParams::default()).unwrap();
    let b = build_bundle(&c.pois, &c.cbgs, &BuildParams::default()).unwrap();
    let bytes = a.to_bytes().unwrap();
    assert_eq!(bytes, b.to_bytes().unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bundle.bin");
    a.save(&path).unwrap();
    let back = Bundle::load(&path).unwrap();
    assert_eq!(back, a);
    assert_eq!(back.to_bytes().unwrap(), bytes);

    let mut bad = bytes.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 0x40;
    assert!(matches!(Bundle::from_bytes(&bad, "mem"), Err(Error::Corrupt { .. })));
    assert!(Bundle::from_bytes(&bytes[..bytes.len() - 3], "mem").is_err());
}

#[test]
fn split_seed_changes_only_the_split() {
    let c = county(5);
    let a = build_bundle(&c.pois, &c.cbgs, &BuildParams::default()).unwrap();
    let params = BuildParams {
        split_seed: 9,
        ..BuildParams::default()
    };
    let b = build_bundle(&c.pois, &c.cbgs, &params).unwrap();
    assert_ne!(a.split, b.split);
    assert_eq!(a.candidates, b.candidates);
    assert_eq!(a.split.counts(), b.split.counts());
}

#[test]
fn every_method_fits_and_round_trips() {
    let c = county(6);
    let bundle = build_bundle(&c.pois, &c.cbgs, &BuildParams::default()).unwrap();
    let cfg = quick_config();
    let prep = Prepared::new(&bundle, cfg.k()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for method in Method::ALL {
        let fitted = fit(method, &prep, &cfg).unwrap();
        let path = dir.path().join(format!("{}.bin", method.name()));
        fitted.checkpoint.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, fitted.checkpoint);
        let (m1, p1) = evaluate_split(&fitted.checkpoint, &prep, SplitLabel::Test).unwrap();
        let (m2, p2) = evaluate_split(&back, &prep, SplitLabel::Test).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(serde_json::to_string(&m1).unwrap(), serde_json::to_string(&m2).unwrap());
        assert!(m1.kl.is_finite() && m1.kl >= 0.0);
        assert_eq!(m1.method, method.name());
    }
}

#[test]
fn checkpoint_rejects_a_mismatched_candidate_size() {
    let c = county(7);
    let bundle = build_bundle(&c.pois, &c.cbgs, &BuildParams::default()).unwrap();
    let cfg = quick_config();
    let fitted = fit(Method::Mlp, &Prepared::new(&bundle, cfg.k()).unwrap(), &cfg).unwrap();
    let other = Prepared::new(&bundle, cfg.k() + 2).unwrap();
    assert!(evaluate_split(&fitted.checkpoint, &other, SplitLabel::Val).is_err());
}
