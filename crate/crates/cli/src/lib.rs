//! The `ctxloc` command line: generate synthetic data, train, predict,
//! evaluate and benchmark inference.

pub mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ctxloc::eval::{evaluate_model, overlap_curve, summarize, write_curve_csv};
use ctxloc::io::{check_schema, read_json, write_json};
use ctxloc::model::ModelDoc;
use ctxloc::pipeline::TrainedPipeline;
use ctxloc::synth::generate_split;
use ctxloc::{infer_brute, infer_fast, train_model, Dataset, FeatureSet, GenConfig, LocalizerModel, Scenario, Window};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::RunConfig;

/// Scene ids of the test split start here so they never collide with
/// training ids.
pub const TEST_ID_OFFSET: u64 = 1_000_000;
pub const PREDICTIONS_SCHEMA: &str = "1.0";
pub const BENCH_SCHEMA: &str = "1.0";

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_NOT_CONVERGED: u8 = 3;
pub const EXIT_INTERNAL: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "ctxloc", version, about = "Context-aware object localization over candidate windows")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write train and test splits of a synthetic dataset.
    Generate(GenerateArgs),
    /// Fit the relation GP and learn the score weights.
    Train(TrainArgs),
    /// Localize the object in every scene of a dataset.
    Predict(PredictArgs),
    /// Mean-overlap curve and summary on a dataset with ground truth.
    Eval(EvalArgs),
    /// Time exhaustive against early-rejection inference.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    Default,
    Container,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeaturesArg {
    Full,
    ScoreOnly,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Directory receiving train.json and test.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub scenario: Option<ScenarioArg>,
    #[arg(long)]
    pub num_windows: Option<usize>,
    /// Gzip the split files.
    #[arg(long)]
    pub gzip: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Training log as JSON lines (default: next to the model).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    #[arg(long, value_enum)]
    pub features: Option<FeaturesArg>,
    #[arg(long)]
    pub kernel_iterations: Option<usize>,
    #[arg(long)]
    pub kernel_cap: Option<usize>,
    #[arg(long)]
    pub gp_cap: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Coverage vs mean overlap CSV.
    #[arg(long)]
    pub curve: PathBuf,
    #[arg(long)]
    pub summary: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Per-scene records as JSON lines.
    #[arg(long)]
    pub out: PathBuf,
    /// Aggregate report.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Only the first this many scenes.
    #[arg(long)]
    pub limit: Option<usize>,
}

/// Why a command did not succeed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Validation(anyhow::Error),
    NotConverged(String),
    Internal(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => EXIT_VALIDATION,
            Failure::NotConverged(_) => EXIT_NOT_CONVERGED,
            Failure::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<ctxloc::Error>() {
            Some(ctxloc::Error::NotPositiveDefinite) => Failure::Internal(e),
            _ => Failure::Validation(e),
        }
    }
}

impl From<ctxloc::Error> for Failure {
    fn from(e: ctxloc::Error) -> Self {
        Failure::from(anyhow::Error::from(e))
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Validation(e) => write!(f, "{e:#}"),
            Failure::NotConverged(m) => write!(f, "training did not converge: {m}"),
            Failure::Internal(e) => write!(f, "internal invariant violated: {e:#}"),
        }
    }
}

pub type CmdResult = std::result::Result<(), Failure>;

/// Runs a parsed command line and maps the outcome to an exit code.
pub fn run(cli: Cli) -> ExitCode {
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}

pub fn execute(cli: Cli) -> CmdResult {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    cfg.validate()?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cfg.threads {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| Failure::Internal(e.into()))?
    };
    pool.install(|| match cli.command {
        Command::Generate(a) => cmd_generate(&cfg, &a),
        Command::Train(a) => cmd_train(&cfg, &a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Bench(a) => cmd_bench(&a),
    })
}

/// Generator settings after applying config, preset and flags.
pub fn resolve_gen_config(cfg: &RunConfig, args: &GenerateArgs) -> GenConfig {
    let scenario = args.scenario.map(|s| match s {
        ScenarioArg::Default => Scenario::Default,
        ScenarioArg::Container => Scenario::Container,
    });
    let mut g = match (&cfg.generate.scene, scenario) {
        (Some(g), _) => g.clone(),
        (None, Some(Scenario::Container)) => GenConfig::container(),
        (None, _) => GenConfig::default(),
    };
    if let Some(s) = scenario {
        g.scenario = s;
    }
    if let Some(s) = args.seed.or(cfg.seed) {
        g.seed = s;
    }
    if let Some(n) = args.num_windows {
        g.num_windows = n;
    }
    g
}

fn split_path(dir: &Path, name: &str, gzip: bool) -> PathBuf {
    dir.join(if gzip { format!("{name}.json.gz") } else { format!("{name}.json") })
}

pub fn cmd_generate(cfg: &RunConfig, args: &GenerateArgs) -> CmdResult {
    let gen = resolve_gen_config(cfg, args);
    gen.validate()?;
    let n_train = args.train.unwrap_or(cfg.generate.train_scenes);
    let n_test = args.test.unwrap_or(cfg.generate.test_scenes);
    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    for (name, first, count) in [("train", 0, n_train), ("test", TEST_ID_OFFSET, n_test)] {
        let scenes = generate_split(&gen, first, count)?;
        let path = split_path(&args.out_dir, name, args.gzip);
        Dataset::new(Some(gen.clone()), scenes).save(&path)?;
        log::info!("wrote {count} scenes to {}", path.display());
    }
    Ok(())
}

/// Pipeline settings after applying config and flags.
pub fn resolve_pipeline(cfg: &RunConfig, args: &TrainArgs) -> ctxloc::PipelineConfig {
    let mut p = cfg.train.clone();
    if let Some(s) = args.seed.or(cfg.seed) {
        p.seed = s;
    }
    if let Some(v) = args.gamma {
        p.learner.gamma = v;
    }
    if let Some(v) = args.epsilon {
        p.learner.epsilon = v;
    }
    if let Some(v) = args.max_rounds {
        p.learner.max_rounds = v;
    }
    if let Some(f) = args.features {
        p.features = match f {
            FeaturesArg::Full => FeatureSet::Full,
            FeaturesArg::ScoreOnly => FeatureSet::ScoreOnly,
        };
    }
    if let Some(v) = args.kernel_iterations {
        p.kernel_iterations = v;
    }
    if let Some(v) = args.kernel_cap {
        p.kernel_cap = v;
    }
    if let Some(v) = args.gp_cap {
        p.gp_cap = v;
    }
    p
}

fn default_log_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".log.jsonl");
    PathBuf::from(s)
}

fn write_training_log(path: &Path, tp: &TrainedPipeline) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    let kernel = serde_json::json!({
        "event": "kernel",
        "config": tp.kernel_fit.config,
        "log_likelihood_trace": tp.kernel_fit.trace,
        "warning": tp.kernel_fit.warning,
    });
    writeln!(out, "{kernel}")?;
    for round in &tp.outcome.log {
        let mut v = serde_json::to_value(round)?;
        v["event"] = "round".into();
        writeln!(out, "{v}")?;
    }
    let done = serde_json::json!({ "event": "done", "summary": tp.summary() });
    writeln!(out, "{done}")?;
    out.flush()?;
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, args: &TrainArgs) -> CmdResult {
    let pcfg = resolve_pipeline(cfg, args);
    let mut check = cfg.clone();
    check.train = pcfg.clone();
    check.validate()?;
    let data = Dataset::load(&args.data)?;
    let tp = train_model(&data.scenes, &pcfg)?;
    let summary = tp.summary();
    write_json(&args.model, &tp.model.to_doc(Some(summary.clone())), true)?;
    let log_path = args.log.clone().unwrap_or_else(|| default_log_path(&args.model));
    write_training_log(&log_path, &tp)?;
    log::info!(
        "trained on {} scenes: {} rounds, objective {:.6}, converged {}",
        summary.num_images,
        summary.rounds,
        summary.objective,
        summary.converged
    );
    if !summary.converged {
        return Err(Failure::NotConverged(format!(
            "stopped after {} rounds; model written to {}",
            summary.rounds,
            args.model.display()
        )));
    }
    Ok(())
}

pub fn load_model(path: &Path) -> Result<LocalizerModel, Failure> {
    let doc: ModelDoc = read_json(path)?;
    Ok(LocalizerModel::from_doc(doc)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub scene_id: u64,
    pub window_index: usize,
    pub window: Window,
    pub score: f64,
    pub full_evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionsDoc {
    pub schema_version: String,
    pub predictions: Vec<Prediction>,
}

impl PredictionsDoc {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let doc: PredictionsDoc = read_json(path)?;
        check_schema("predictions", &doc.schema_version, PREDICTIONS_SCHEMA)?;
        Ok(doc)
    }
}

pub fn predict_all(model: &LocalizerModel, data: &Dataset) -> ctxloc::Result<Vec<Prediction>> {
    data.scenes
        .par_iter()
        .map(|s| {
            let r = model.localize(s)?;
            Ok(Prediction {
                scene_id: s.id,
                window_index: r.best_index,
                window: s.windows[r.best_index],
                score: r.best_score,
                full_evaluations: r.full_evaluations,
            })
        })
        .collect()
}

pub fn cmd_predict(args: &PredictArgs) -> CmdResult {
    let model = load_model(&args.model)?;
    let data = Dataset::load(&args.data)?;
    let doc = PredictionsDoc {
        schema_version: PREDICTIONS_SCHEMA.to_string(),
        predictions: predict_all(&model, &data)?,
    };
    write_json(&args.out, &doc, true)?;
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> CmdResult {
    let model = load_model(&args.model)?;
    let data = Dataset::load(&args.data)?;
    let report = evaluate_model(&model, &data.scenes)?;
    if report.records.is_empty() {
        return Err(Failure::Validation(anyhow::anyhow!(
            "{} has no scene with ground truth ({} skipped)",
            args.data.display(),
            report.skipped
        )));
    }
    if report.skipped > 0 {
        log::warn!("{} scenes without ground truth skipped", report.skipped);
    }
    let curve = overlap_curve(&report.records)?;
    let file = File::create(&args.curve).with_context(|| format!("creating {}", args.curve.display()))?;
    write_curve_csv(BufWriter::new(file), &curve).with_context(|| format!("writing {}", args.curve.display()))?;
    let summary = summarize(&report);
    write_json(&args.summary, &summary, true)?;
    if let Some(m) = summary.mean_overlap {
        log::info!("{} scenes, mean overlap {m:.4}", summary.num_scenes);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub scene_id: u64,
    pub num_windows: usize,
    pub brute_seconds: f64,
    pub fast_seconds: f64,
    pub full_evaluations: usize,
    pub agree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub schema_version: String,
    pub num_scenes: usize,
    pub brute_seconds: f64,
    pub fast_seconds: f64,
    /// Total brute time over total fast time.
    pub speedup: f64,
    /// Mean of full evaluations over window count.
    pub mean_evaluation_ratio: f64,
    pub all_agree: bool,
}

/// Runs both inference routines on every scene, sequentially so the
/// timings do not compete for cores.
pub fn bench_scenes(model: &LocalizerModel, data: &Dataset, limit: Option<usize>) -> ctxloc::Result<Vec<BenchRecord>> {
    let n = limit.unwrap_or(data.scenes.len()).min(data.scenes.len());
    data.scenes[..n]
        .iter()
        .map(|s| {
            let ctx = model.context(s)?;
            let b = infer_brute(&model.alpha, &ctx);
            let f = infer_fast(&model.alpha, &ctx);
            let agree = b.best_index == f.best_index && (b.best_score - f.best_score).abs() <= 1e-9;
            Ok(BenchRecord {
                scene_id: s.id,
                num_windows: ctx.len(),
                brute_seconds: b.elapsed.as_secs_f64(),
                fast_seconds: f.elapsed.as_secs_f64(),
                full_evaluations: f.full_evaluations,
                agree,
            })
        })
        .collect()
}

pub fn bench_summary(records: &[BenchRecord]) -> BenchSummary {
    let brute: f64 = records.iter().map(|r| r.brute_seconds).sum();
    let fast: f64 = records.iter().map(|r| r.fast_seconds).sum();
    let ratio = if records.is_empty() {
        0.0
    } else {
        records.iter().map(|r| r.full_evaluations as f64 / r.num_windows as f64).sum::<f64>() / records.len() as f64
    };
    BenchSummary {
        schema_version: BENCH_SCHEMA.to_string(),
        num_scenes: records.len(),
        brute_seconds: brute,
        fast_seconds: fast,
        speedup: brute / fast.max(1e-9),
        mean_evaluation_ratio: ratio,
        all_agree: records.iter().all(|r| r.agree),
    }
}

pub fn cmd_bench(args: &BenchArgs) -> CmdResult {
    let model = load_model(&args.model)?;
    let data = Dataset::load(&args.data)?;
    let records = bench_scenes(&model, &data, args.limit)?;
    let file = File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut out = BufWriter::new(file);
    for r in &records {
        writeln!(out, "{}", serde_json::to_string(r).map_err(anyhow::Error::from)?).map_err(anyhow::Error::from)?;
    }
    out.flush().map_err(anyhow::Error::from)?;
    let summary = bench_summary(&records);
    if let Some(p) = &args.summary {
        write_json(p, &summary, true)?;
    }
    log::info!(
        "{} scenes: speedup {:.1}x, evaluation ratio {:.3}",
        summary.num_scenes,
        summary.speedup,
        summary.mean_evaluation_ratio
    );
    if !summary.all_agree {
        let bad: Vec<u64> = records.iter().filter(|r| !r.agree).map(|r| r.scene_id).collect();
        return Err(Failure::Internal(anyhow::anyhow!(
            "fast and brute inference disagree on scenes {bad:?}"
        )));
    }
    Ok(())
}
