//! Command surface: artifacts, idempotence and exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SYNTH: &str = r#"{"n_cbg": 36, "n_poi": 80, "extent_km": 6.0}"#;
const TRAIN: &str = r#"{
  "lr": 0.003, "max_epochs": 6, "patience": 3,
  "model": {"d_cbg": 16, "d_poi": 16, "d_hid": 16, "d_e": 4, "k": 12, "head_widths": [16, 1]}
}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_visithgnn"))
}

fn run(args: &[&str]) -> Output {
    bin().arg("--quiet").args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(args: &[&str]) -> (i32, String) {
    let out = run(args);
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("synth.json"), SYNTH).unwrap();
        fs::write(root.join("train.json"), TRAIN).unwrap();
        Workspace { _dir: dir, root }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// synth + build-graph into `tables/` and `graph/`.
    fn bundle(&self) -> PathBuf {
        ok(&["--config", s(&self.p("synth.json")), "--out", s(&self.p("tables")), "synth"]);
        ok(&["--out", s(&self.p("graph")), "build-graph", "--tables", s(&self.p("tables"))]);
        self.p("graph/bundle.bin")
    }

    fn train(&self, bundle: &Path, method: &str, out: &str) -> PathBuf {
        ok(&[
            "--config",
            s(&self.p("train.json")),
            "--out",
            s(&self.p(out)),
            "train",
            "--bundle",
            s(bundle),
            "--method",
            method,
        ]);
        self.p(out).join("checkpoint.bin")
    }
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn full_pipeline_emits_artifacts_and_is_idempotent() {
    let w = Workspace::new();
    let bundle = w.bundle();
    for f in ["pois.jsonl", "cbgs.csv", "truth.csv", "synth_config.json", "manifest.json"] {
        assert!(w.p("tables").join(f).exists(), "{f}");
    }
    for f in ["poi_schema.json", "cbg_schema.json", "manifest.json"] {
        assert!(w.p("graph").join(f).exists(), "{f}");
    }
    let ck = w.train(&bundle, "visithgnn", "train");
    let report = fs::read_to_string(w.p("train/train_report.jsonl")).unwrap();
    let lines: Vec<Value> = report.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(lines.len() >= 2);
    assert!(lines[0].get("val_kl").is_some());
    assert!(w.p("train/curves.csv").exists());

    let eval = |out: &str| {
        ok(&[
            "--out",
            s(&w.p(out)),
            "evaluate",
            "--bundle",
            s(&bundle),
            "--checkpoint",
            s(&ck),
            "--split",
            "test",
            "--truth",
            s(&w.p("tables/truth.csv")),
        ]);
    };
    eval("eval1");
    eval("eval2");
    for f in ["metrics.json", "per_poi.csv", "kl_histogram.csv", "scatter.csv", "noise_floor.json"] {
        let a = fs::read(w.p("eval1").join(f)).unwrap();
        assert_eq!(a, fs::read(w.p("eval2").join(f)).unwrap(), "{f} differs between reruns");
    }
    let (m1, m2) = (manifest(&w.p("eval1")), manifest(&w.p("eval2")));
    assert_eq!(m1["content_hash"], m2["content_hash"]);
    assert_eq!(m1["bundle_hash"], manifest(&w.p("graph"))["bundle_hash"]);
    let metrics: Value = serde_json::from_str(&fs::read_to_string(w.p("eval1/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["split"], "test");
    assert!(metrics["kl"].as_f64().unwrap() >= 0.0);

    // retraining reproduces the checkpoint byte for byte
    let ck2 = w.train(&bundle, "visithgnn", "train2");
    assert_eq!(fs::read(&ck).unwrap(), fs::read(ck2).unwrap());
}

#[test]
fn baselines_train_and_evaluate() {
    let w = Workspace::new();
    let bundle = w.bundle();
    for m in ["mlp", "knn_geo"] {
        let ck = w.train(&bundle, m, m);
        ok(&["--out", s(&w.p(&format!("{m}_eval"))), "evaluate", "--bundle", s(&bundle), "--checkpoint", s(&ck)]);
        let metrics: Value =
            serde_json::from_str(&fs::read_to_string(w.p(&format!("{m}_eval/metrics.json"))).unwrap()).unwrap();
        assert_eq!(metrics["method"], m);
    }
}

#[test]
fn seed_flag_overrides_the_config() {
    let w = Workspace::new();
    let synth = w.p("synth.json");
    ok(&["--config", s(&synth), "--out", s(&w.p("a")), "synth"]);
    ok(&["--config", s(&synth), "--seed", "5", "--out", s(&w.p("b")), "synth"]);
    let cfg: Value = serde_json::from_str(&fs::read_to_string(w.p("b/synth_config.json")).unwrap()).unwrap();
    assert_eq!(cfg["seed"], 5);
    assert_ne!(fs::read(w.p("a/truth.csv")).unwrap(), fs::read(w.p("b/truth.csv")).unwrap());
}

#[test]
fn input_errors_exit_with_2() {
    let w = Workspace::new();
    let (c, err) = code(&["--config", s(&w.p("missing.json")), "--out", s(&w.p("x")), "synth"]);
    assert_eq!(c, 2);
    assert!(err.contains("missing.json"), "{err}");

    fs::write(w.p("typo.json"), r#"{"n_cbgs": 10}"#).unwrap();
    let (c, err) = code(&["--config", s(&w.p("typo.json")), "--out", s(&w.p("x")), "synth"]);
    assert_eq!(c, 2);
    assert!(err.contains("n_cbgs"), "{err}");

    fs::write(w.p("zero.json"), r#"{"lambda_g_m": 0.0}"#).unwrap();
    let (c, err) = code(&["--config", s(&w.p("zero.json")), "--out", s(&w.p("x")), "synth"]);
    assert_eq!(c, 2);
    assert!(err.contains("lambda_g_m"), "{err}");

    let bundle = w.bundle();
    let ck = w.train(&bundle, "knn_geo", "knn");
    let (c, _) = code(&["--out", s(&w.p("e")), "evaluate", "--bundle", s(&bundle), "--checkpoint", s(&ck), "--split", "holdout"]);
    assert_eq!(c, 2);
    let (c, _) = code(&["--out", s(&w.p("e")), "train", "--bundle", s(&bundle), "--method", "gbdt"]);
    assert_eq!(c, 2);
    let (c, err) = code(&["--out", s(&w.p("e")), "ablate", "--bundle", s(&bundle), "--axis", "dropout"]);
    assert_eq!(c, 2);
    assert!(err.contains("dropout"), "{err}");

    // duplicate POI ids
    let tables = w.p("tables");
    let pois = fs::read_to_string(tables.join("pois.jsonl")).unwrap();
    let first = pois.lines().next().unwrap().to_string();
    fs::write(tables.join("pois.jsonl"), format!("{pois}{first}\n")).unwrap();
    let (c, err) = code(&["--out", s(&w.p("g2")), "build-graph", "--tables", s(&tables)]);
    assert_eq!(c, 2);
    assert!(err.contains("duplicate"), "{err}");
}

#[test]
fn evaluating_on_another_bundle_exits_with_2() {
    let w = Workspace::new();
    let bundle = w.bundle();
    let ck = w.train(&bundle, "knn_geo", "knn");
    ok(&["--seed", "3", "--out", s(&w.p("graph2")), "build-graph", "--tables", s(&w.p("tables"))]);
    let (c, err) = code(&[
        "--out",
        s(&w.p("e")),
        "evaluate",
        "--bundle",
        s(&w.p("graph2/bundle.bin")),
        "--checkpoint",
        s(&ck),
    ]);
    assert_eq!(c, 2);
    assert!(err.contains("bundle"), "{err}");
}

#[test]
fn train_split_evaluation_warns() {
    let w = Workspace::new();
    let bundle = w.bundle();
    let ck = w.train(&bundle, "knn_geo", "knn");
    let out = bin()
        .args(["--out", s(&w.p("e")), "evaluate", "--bundle", s(&bundle), "--checkpoint", s(&ck), "--split", "train"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("WARN"));
}

#[test]
fn divergence_exits_with_3() {
    let w = Workspace::new();
    let bundle = w.bundle();
    fs::write(w.p("hot.json"), TRAIN.replace("\"lr\": 0.003", "\"lr\": 1e300")).unwrap();
    let (c, err) = code(&["--config", s(&w.p("hot.json")), "--out", s(&w.p("t")), "train", "--bundle", s(&bundle)]);
    assert_eq!(c, 3, "{err}");
}

#[test]
fn ablation_rows_carry_config_hashes() {
    let w = Workspace::new();
    let bundle = w.bundle();
    ok(&[
        "--config",
        s(&w.p("train.json")),
        "--out",
        s(&w.p("abl")),
        "ablate",
        "--bundle",
        s(&bundle),
        "--panel",
        "d",
        "--axis",
        "cbg_adjacency",
        "--seeds",
        "0,1",
    ]);
    let mut r = csv::Reader::from_path(w.p("abl/ablation.csv")).unwrap();
    let headers = r.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    // 2 x 2 variants, 2 seeds each
    assert_eq!(rows.len(), 8);
    let hash = headers.iter().position(|h| h == "config_hash").unwrap();
    let hashes: std::collections::BTreeSet<&str> = rows.iter().map(|r| &r[hash]).collect();
    assert_eq!(hashes.len(), 4);
    assert_eq!(&rows[0][0], "graphnorm=on,cbg_adjacency=on");
}

#[test]
fn search_writes_a_sorted_leaderboard() {
    let w = Workspace::new();
    let bundle = w.bundle();
    fs::write(w.p("space.json"), r#"{"k": [8, 12], "width": [8, 16]}"#).unwrap();
    ok(&[
        "--config",
        s(&w.p("train.json")),
        "--out",
        s(&w.p("search")),
        "search",
        "--bundle",
        s(&bundle),
        "--method",
        "mlp",
        "--budget",
        "3",
        "--space",
        s(&w.p("space.json")),
    ]);
    let board: Value = serde_json::from_str(&fs::read_to_string(w.p("search/leaderboard.json")).unwrap()).unwrap();
    let kls: Vec<f64> = board["trials"].as_array().unwrap().iter().map(|t| t["val_kl"].as_f64().unwrap()).collect();
    assert_eq!(kls.len(), 3);
    assert!(kls.windows(2).all(|p| p[0] <= p[1]));
    assert!(w.p("search/best_config.json").exists());
}
