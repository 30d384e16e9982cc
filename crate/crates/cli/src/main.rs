//! Batch command-line surface for the visitor-origin pipeline.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use visithgnn::ablation::{content_hash, panel, sha256_hex, variants, Axis};
use visithgnn::experiment::{evaluate_split, fit, Method, Prepared};
use visithgnn::graph::assemble::{build_bundle, BuildParams};
use visithgnn::graph::bundle::Bundle;
use visithgnn::graph::input::{read_cbgs, read_pois, write_cbgs, write_pois};
use visithgnn::metrics::plots::{write_histogram, write_per_poi, write_scatter};
use visithgnn::model::Checkpoint;
use visithgnn::synth::{generate, truth_metrics, SynthConfig, SynthTruth};
use visithgnn::training::{random_search, SearchSpace, SplitLabel, TrainConfig};

#[derive(Parser)]
#[command(name = "visithgnn", version, about = "Visitor-origin prediction on POI/CBG graphs")]
struct Cli {
    /// Overrides the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// JSON config for the command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Only print warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic county: raw tables plus the exact origin distributions.
    Synth,
    /// Build a graph bundle from raw tables.
    BuildGraph {
        /// Directory holding pois.jsonl and cbgs.csv.
        #[arg(long)]
        tables: PathBuf,
    },
    /// Fit one method on the train split; no resume support.
    Train {
        #[command(flatten)]
        bundle: BundleArg,
        /// visithgnn, mlp or knn_geo.
        #[arg(long, default_value = "visithgnn")]
        method: String,
    },
    /// Score a checkpoint on one split and emit plot data.
    Evaluate {
        #[command(flatten)]
        bundle: BundleArg,
        /// checkpoint.bin written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// train, val or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Exact distributions from `synth`; adds the sampling-noise floor.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Train component variants and compare their validation metrics.
    Ablate {
        #[command(flatten)]
        bundle: BundleArg,
        /// Named panel a (POI-POI relations), b (CBG adjacency), c (cross edges), d (GraphNorm).
        #[arg(long)]
        panel: Vec<String>,
        /// Axis to sweep: pp_relations, cbg_adjacency, cross_edges, graphnorm.
        #[arg(long)]
        axis: Vec<String>,
        /// Training seeds per variant.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
    },
    /// Random hyperparameter search over the validation KL.
    Search {
        #[command(flatten)]
        bundle: BundleArg,
        /// visithgnn, mlp or knn_geo.
        #[arg(long, default_value = "visithgnn")]
        method: String,
        /// Number of trials.
        #[arg(long, default_value_t = 20)]
        budget: usize,
        /// JSON search space; defaults to the built-in ranges.
        #[arg(long)]
        space: Option<PathBuf>,
    },
}

#[derive(Args)]
struct BundleArg {
    /// bundle.bin written by `build-graph`.
    #[arg(long)]
    bundle: PathBuf,
}

#[derive(Serialize)]
struct Artifact {
    path: String,
    sha256: String,
}

/// One per output directory. `wall_clock_s` is left out of `content_hash`.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    config_hash: String,
    bundle_hash: Option<String>,
    seed: Option<u64>,
    artifacts: Vec<Artifact>,
    versions: BTreeMap<String, String>,
    content_hash: String,
    wall_clock_s: f64,
}

struct Run {
    out: PathBuf,
    command: &'static str,
    started: Instant,
    artifacts: Vec<PathBuf>,
}

impl Run {
    fn new(out: &Path, command: &'static str) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Run {
            out: out.to_path_buf(),
            command,
            started: Instant::now(),
            artifacts: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.artifacts.push(p.clone());
        p
    }

    fn write_json(&mut self, name: &str, v: &impl Serialize) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, serde_json::to_string_pretty(v)? + "\n").with_context(|| format!("writing {}", p.display()))
    }

    fn finish(self, config_hash: String, bundle_hash: Option<String>, seed: Option<u64>) -> Result<()> {
        let mut artifacts = Vec::with_capacity(self.artifacts.len());
        for p in &self.artifacts {
            let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            artifacts.push(Artifact {
                path: p.file_name().unwrap_or_default().to_string_lossy().into_owned(),
                sha256: sha256_hex(&bytes),
            });
        }
        let versions = BTreeMap::from([
            ("visithgnn".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("bundle_format".to_string(), visithgnn::graph::bundle::BUNDLE_VERSION.to_string()),
        ]);
        let content = content_hash(&(&self.command, &config_hash, &bundle_hash, &seed, &artifacts, &versions))?;
        let m = RunManifest {
            command: self.command.to_string(),
            config_hash,
            bundle_hash,
            seed,
            artifacts,
            versions,
            content_hash: content,
            wall_clock_s: self.started.elapsed().as_secs_f64(),
        };
        let p = self.out.join("manifest.json");
        fs::write(&p, serde_json::to_string_pretty(&m)? + "\n").with_context(|| format!("writing {}", p.display()))?;
        log::info!("{}: wrote {} artifacts to {}", self.command, m.artifacts.len(), self.out.display());
        Ok(())
    }
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let s = fs::read_to_string(p).map_err(|e| visithgnn::Error::io(p, e))?;
            let v = serde_json::from_str(&s).map_err(visithgnn::Error::from)?;
            Ok(v)
        }
    }
}

fn train_config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = read_config(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_bundle(path: &Path) -> Result<Bundle> {
    Ok(Bundle::load(path)?)
}

fn cmd_synth(cli: &Cli) -> Result<()> {
    let mut cfg: SynthConfig = read_config(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let county = generate(&cfg)?;
    let mut run = Run::new(&cli.out, "synth")?;
    let p = run.path("pois.jsonl");
    write_pois(fs::File::create(&p).map_err(|e| visithgnn::Error::io(&p, e))?, &county.pois)?;
    let p = run.path("cbgs.csv");
    write_cbgs(fs::File::create(&p).map_err(|e| visithgnn::Error::io(&p, e))?, &county.cbgs)?;
    county.truth.write_csv(&run.path("truth.csv"))?;
    run.write_json("synth_config.json", &cfg)?;
    run.finish(content_hash(&cfg)?, None, Some(cfg.seed))
}

fn cmd_build_graph(cli: &Cli, tables: &Path) -> Result<()> {
    let mut params: BuildParams = read_config(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        params.split_seed = s;
    }
    let open = |name: &str| {
        let p = tables.join(name);
        fs::File::open(&p).map_err(|e| visithgnn::Error::io(&p, e))
    };
    let pois = read_pois(open("pois.jsonl")?)?;
    let cbgs = read_cbgs(open("cbgs.csv")?)?;
    let bundle = build_bundle(&pois, &cbgs, &params)?;
    let mut run = Run::new(&cli.out, "build-graph")?;
    bundle.save(&run.path("bundle.bin"))?;
    run.write_json("poi_schema.json", &bundle.poi_schema)?;
    run.write_json("cbg_schema.json", &bundle.cbg_schema)?;
    run.write_json("build_params.json", &params)?;
    let hash = bundle.content_hash()?;
    run.finish(content_hash(&params)?, Some(hash), Some(params.split_seed))
}

fn cmd_train(cli: &Cli, bundle_path: &Path, method: &str) -> Result<()> {
    let method = Method::parse(method)?;
    let cfg = train_config(cli)?;
    let bundle = load_bundle(bundle_path)?;
    let prep = Prepared::new(&bundle, cfg.k())?;
    let fitted = fit(method, &prep, &cfg)?;
    let mut run = Run::new(&cli.out, "train")?;
    fitted.checkpoint.save(&run.path("checkpoint.bin"))?;
    if let Some(r) = &fitted.report {
        r.write_jsonl(&run.path("train_report.jsonl"))?;
        r.write_curves_csv(&run.path("curves.csv"))?;
        log::info!(
            "{}: best val KL {:.6} at epoch {} of {}",
            method.name(),
            r.best_val_kl,
            r.best_epoch,
            r.epochs.len()
        );
    }
    run.write_json("train_config.json", &cfg)?;
    run.finish(content_hash(&(method, &cfg))?, Some(prep.bundle_hash), Some(cfg.seed))
}

fn cmd_evaluate(cli: &Cli, bundle_path: &Path, ck_path: &Path, split: &str, truth: Option<&Path>) -> Result<()> {
    let split = SplitLabel::parse(split)?;
    if split == SplitLabel::Train {
        log::warn!("evaluating on the train split; these numbers are not held out");
    }
    let bundle = load_bundle(bundle_path)?;
    let ck = Checkpoint::load(ck_path)?;
    let prep = Prepared::new(&bundle, ck.k)?;
    if ck.bundle_hash != prep.bundle_hash {
        return Err(visithgnn::Error::IncompatibleBundle(format!(
            "checkpoint was fitted on bundle {}, given bundle is {}",
            ck.bundle_hash, prep.bundle_hash
        ))
        .into());
    }
    let (report, probs) = evaluate_split(&ck, &prep, split)?;
    let rows = prep.rows(split);
    let mut run = Run::new(&cli.out, "evaluate")?;
    run.write_json("metrics.json", &report)?;
    write_per_poi(&run.path("per_poi.csv"), &report, &prep.poi_ids)?;
    write_histogram(&run.path("kl_histogram.csv"), &report)?;
    write_scatter(
        &run.path("scatter.csv"),
        &report.method,
        &prep.cands,
        &probs,
        &rows,
        &prep.poi_ids,
        &prep.cbg_ids,
    )?;
    if let Some(t) = truth {
        let truth = SynthTruth::read_csv(t)?;
        let floor = truth_metrics(&truth, &prep.cands, &rows, &prep.poi_ids, &prep.cbg_ids)?;
        log::info!("noise floor KL {:.6} over {} rows", floor.mean_kl, floor.n_rows);
        run.write_json("noise_floor.json", &floor)?;
    }
    log::info!(
        "{} {}: KL {:.6} MAE {:.6} Top-1 {:.4}",
        report.method,
        split.name(),
        report.kl,
        report.mae,
        report.top1
    );
    run.finish(ck.spec.hash()?, Some(prep.bundle_hash), None)
}

fn cmd_ablate(cli: &Cli, bundle_path: &Path, panels: &[String], axes: &[String], seeds: &[u64]) -> Result<()> {
    let mut chosen = Vec::new();
    for p in panels {
        chosen.push(panel(p)?);
    }
    for a in axes {
        chosen.push(Axis::parse(a)?);
    }
    if chosen.is_empty() {
        bail!(visithgnn::Error::validation("ablate needs at least one --panel or --axis"));
    }
    if seeds.is_empty() {
        bail!(visithgnn::Error::validation("ablate needs at least one seed"));
    }
    let base = train_config(cli)?;
    let vars = variants(&base, &chosen)?;
    let bundle = load_bundle(bundle_path)?;
    let prep = Prepared::new(&bundle, base.k())?;
    let mut run = Run::new(&cli.out, "ablate")?;
    let p = run.path("ablation.csv");
    let mut w = csv::Writer::from_path(&p).with_context(|| format!("writing {}", p.display()))?;
    let mut header: Vec<String> = vec!["variant".into(), "config_hash".into()];
    header.extend(chosen.iter().map(|a| a.name().to_string()));
    header.extend(["seed", "best_epoch", "val_kl", "val_mae", "val_top1", "mean_val_kl"].map(String::from));
    w.write_record(&header)?;
    for v in &vars {
        let mut kls = Vec::with_capacity(seeds.len());
        let mut rows = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = v.config.clone();
            cfg.seed = seed;
            let fitted = fit(Method::Visithgnn, &prep, &cfg)?;
            let (m, _) = evaluate_split(&fitted.checkpoint, &prep, SplitLabel::Val)?;
            log::info!("{} seed {seed}: val KL {:.6}", v.label(), m.kl);
            kls.push(m.kl);
            rows.push((seed, fitted.checkpoint.best_epoch, m.kl, m.mae, m.top1));
        }
        let mean = kls.iter().sum::<f64>() / kls.len() as f64;
        let hash = content_hash(&v.config)?;
        for (seed, epoch, kl, mae, top1) in rows {
            let mut rec = vec![v.label(), hash.clone()];
            rec.extend(v.settings.iter().map(|(_, s)| s.clone()));
            rec.extend([seed.to_string(), epoch.to_string(), kl.to_string(), mae.to_string(), top1.to_string(), mean.to_string()]);
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    drop(w);
    run.write_json("base_config.json", &base)?;
    let hash = content_hash(&(&base, axes, panels, seeds))?;
    run.finish(hash, Some(prep.bundle_hash), None)
}

fn cmd_search(cli: &Cli, bundle_path: &Path, method: &str, budget: usize, space: Option<&Path>) -> Result<()> {
    let method = Method::parse(method)?;
    if method == Method::KnnGeo {
        bail!(visithgnn::Error::validation("knn_geo has no hyperparameters to search; its decay scale is fitted by grid"));
    }
    let base = train_config(cli)?;
    let space: SearchSpace = read_config(space)?;
    let bundle = load_bundle(bundle_path)?;
    let mut cache: BTreeMap<usize, Prepared> = BTreeMap::new();
    let board = random_search(&space, &base, budget, base.seed, |i, cfg| {
        let k = cfg.k();
        if !cache.contains_key(&k) {
            cache.insert(k, Prepared::new(&bundle, k)?);
        }
        let prep = &cache[&k];
        let fitted = fit(method, prep, cfg)?;
        let (m, _) = evaluate_split(&fitted.checkpoint, prep, SplitLabel::Val)?;
        log::info!("trial {i}: K {k} lr {:.2e} val KL {:.6}", cfg.lr, m.kl);
        Ok(m.kl)
    })?;
    let mut run = Run::new(&cli.out, "search")?;
    run.write_json("leaderboard.json", &board)?;
    run.write_json("best_config.json", &board.best().config)?;
    let hash = content_hash(&(method, &base, &space, budget))?;
    run.finish(hash, Some(bundle.content_hash()?), Some(base.seed))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth => cmd_synth(cli),
        Command::BuildGraph { tables } => cmd_build_graph(cli, tables),
        Command::Train { bundle, method } => cmd_train(cli, &bundle.bundle, method),
        Command::Evaluate {
            bundle,
            checkpoint,
            split,
            truth,
        } => cmd_evaluate(cli, &bundle.bundle, checkpoint, split, truth.as_deref()),
        Command::Ablate {
            bundle,
            panel,
            axis,
            seeds,
        } => cmd_ablate(cli, &bundle.bundle, panel, axis, seeds),
        Command::Search {
            bundle,
            method,
            budget,
            space,
        } => cmd_search(cli, &bundle.bundle, method, *budget, space.as_deref()),
    }
}

/// 3 for numeric failure, 2 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<visithgnn::Error>() {
        Some(err) if !err.is_input_error() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
