//! Command-line front end.
//!
//! Subcommands: `synth`, `features`, `preprocess`, `train`, `eval`,
//! `report`, `describe`. Exit status is 0 on success, 1 on invalid usage or
//! input, 2 when a valid request fails while running. Randomness is driven
//! by `--seed`, falling back to `FOVAL_SEED` and then 42.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataset::{self, DatasetError, SubjectRecording};
use crate::eval::{self, EvalReport, SubjectPredictions};
use crate::features::{self, feature_table};
use crate::kv::KvMap;
use crate::nn;
use crate::preprocess::{self, PipelineManifest};
use crate::synth::{self, SynthConfig};
use crate::train::{self, Preset, TrainConfig};

pub const SEED_ENV: &str = "FOVAL_SEED";
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(
    name = "focal-depth",
    version,
    about = "Focal depth estimation from binocular gaze sequences"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic binocular recordings as CSV.
    Synth(SynthArgs),
    /// Compute the 54 per-frame features, or describe them.
    Features(FeaturesArgs),
    /// Fit the preprocessing pipeline on a dataset and write its manifest.
    Preprocess(PreprocessArgs),
    /// Leave-one-subject-out training and evaluation.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint on a dataset.
    Eval(EvalArgs),
    /// Re-render the CSV tables and charts of an existing report.json.
    Report(ReportArgs),
    /// Print features, presets and defaults as JSON.
    Describe,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-frame angular noise, degrees.
    #[arg(long)]
    pub noise_deg: Option<f64>,
    /// Per-subject angular bias, degrees.
    #[arg(long)]
    pub bias_deg: Option<f64>,
    /// `key = value` file with synth settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long, required_unless_present = "describe")]
    pub data: Option<PathBuf>,
    #[arg(long, required_unless_present = "describe")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub describe: bool,
}

#[derive(Debug, Args)]
pub struct TrainSettings {
    /// `key = value` file with training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub settings: TrainSettings,
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path; defaults to `<out>/manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub settings: TrainSettings,
    #[arg(long)]
    pub out: PathBuf,
    /// Folds trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A report.json written by `train` or `eval`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configs or input files. Exit 1.
    Validation(String),
    /// Failure while executing a valid request. Exit 2.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 1,
            Self::Runtime(_) => 2,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Validation(m) => write!(f, "error: {m}"),
            Self::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

fn invalid(e: impl Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Provenance of one run, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub toolkit_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub input_hash: Option<String>,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn now_s() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// `--seed`, else `FOVAL_SEED`, else 42.
pub fn resolve_seed(flag: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| invalid(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("missing input file {}", path.display())))
    }
}

fn load_kv(path: Option<&Path>) -> Result<KvMap, CliError> {
    match path {
        Some(p) => {
            require_file(p)?;
            KvMap::load(p).map_err(invalid)
        }
        None => Ok(KvMap::default()),
    }
}

fn load_data(path: &Path) -> Result<(Vec<SubjectRecording>, String), CliError> {
    require_file(path)?;
    let bytes = std::fs::read(path).map_err(runtime)?;
    let recs = dataset::read_csv(bytes.as_slice()).map_err(|e| match e {
        DatasetError::IoFailure(_) => runtime(e),
        other => invalid(other),
    })?;
    Ok((recs, sha256_hex(&bytes)))
}

fn train_config(s: &TrainSettings) -> Result<TrainConfig, CliError> {
    let mut kv = load_kv(s.config.as_deref())?;
    if let Some(p) = s.preset {
        kv.set("preset", serde_json::to_value(p).unwrap().as_str().unwrap());
    }
    if let Some(e) = s.epochs {
        kv.set("epochs", e);
    }
    let seed = if s.seed.is_some() || kv.get::<u64>("seed").map_err(invalid)?.is_none() {
        Some(resolve_seed(s.seed)?)
    } else {
        None
    };
    if let Some(seed) = seed {
        kv.set("seed", seed);
    }
    TrainConfig::from_kv(&kv).map_err(invalid)
}

/// Prints `text` and a newline; a closed pipe is not an error.
fn print_stdout(text: &str) -> Result<(), CliError> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(runtime(e)),
        _ => Ok(()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    std::fs::write(path, text).map_err(runtime)
}

fn write_run_manifest(
    dir: &Path,
    command: &str,
    seed: u64,
    config_text: &str,
    input_hash: Option<String>,
    started: u64,
) -> Result<(), CliError> {
    let m = RunManifest {
        command: command.into(),
        toolkit_version: env!("CARGO_PKG_VERSION").into(),
        seed,
        config_hash: sha256_hex(config_text.as_bytes()),
        input_hash,
        started_unix_s: started,
        finished_unix_s: now_s(),
    };
    write_json(&dir.join("run_manifest.json"), &m)
}

fn cmd_synth(a: &SynthArgs) -> Result<(), CliError> {
    let mut kv = load_kv(a.config.as_deref())?;
    let flags = [
        ("n_subjects", a.subjects.map(|v| v.to_string())),
        ("frames_per_subject", a.frames.map(|v| v.to_string())),
        ("noise_sigma_deg", a.noise_deg.map(|v| v.to_string())),
        ("bias_sigma_deg", a.bias_deg.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            kv.set(k, v);
        }
    }
    if a.seed.is_some() || kv.get::<u64>("seed").map_err(invalid)?.is_none() {
        kv.set("seed", resolve_seed(a.seed)?);
    }
    let cfg = SynthConfig::from_kv(&kv).map_err(invalid)?;
    let recs = synth::generate(&cfg).map_err(invalid)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(runtime)?;
    }
    dataset::save_csv(&recs, &a.out).map_err(runtime)?;
    eprintln!(
        "wrote {} rows for {} subjects to {}",
        dataset::sample_count(&recs),
        recs.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_features(a: &FeaturesArgs) -> Result<(), CliError> {
    if a.describe {
        return print_stdout(&serde_json::to_string_pretty(&feature_table()).map_err(runtime)?);
    }
    let (data, out) = (a.data.as_ref().unwrap(), a.out.as_ref().unwrap());
    let (recs, _) = load_data(data)?;
    let frames = features::compute_all(&recs).map_err(invalid)?;
    let mut w = csv::Writer::from_path(out).map_err(runtime)?;
    let mut header = vec!["subject_id", "frame_index"];
    header.extend(features::feature_names());
    header.push(dataset::DEPTH_COLUMN);
    w.write_record(&header).map_err(runtime)?;
    for f in frames.iter().flatten() {
        let mut row = vec![f.subject_id.clone(), f.frame_index.to_string()];
        row.extend(f.features.iter().map(f64::to_string));
        row.push(f.gt_depth.map(|d| d.to_string()).unwrap_or_default());
        w.write_record(&row).map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    Ok(())
}

#[derive(Serialize)]
struct PreprocessSummary {
    subject: String,
    frames_after_cleaning: usize,
    sequences: usize,
}

fn cmd_preprocess(a: &PreprocessArgs) -> Result<(), CliError> {
    let started = now_s();
    let cfg = train_config(&a.settings)?;
    let (recs, input_hash) = load_data(&a.data)?;
    let data = train::prepare(&recs, &cfg.pipeline).map_err(invalid)?;
    let (manifest, _) =
        preprocess::fit_pipeline(&data.frames, &cfg.pipeline, cfg.seed).map_err(invalid)?;
    std::fs::create_dir_all(&a.out).map_err(runtime)?;
    let path = a
        .manifest
        .clone()
        .unwrap_or_else(|| a.out.join("manifest.json"));
    std::fs::write(&path, manifest.to_json()).map_err(runtime)?;
    let mut summary = Vec::new();
    for (id, frames) in data.subject_ids.iter().zip(&data.frames) {
        let batch = manifest
            .apply(std::slice::from_ref(frames))
            .map_err(invalid)?;
        summary.push(PreprocessSummary {
            subject: id.clone(),
            frames_after_cleaning: frames.len(),
            sequences: batch.len(),
        });
    }
    write_json(&a.out.join("summary.json"), &summary)?;
    let config_text = cfg.to_kv().to_text();
    std::fs::write(a.out.join("config.txt"), &config_text).map_err(runtime)?;
    write_run_manifest(
        &a.out,
        "preprocess",
        cfg.seed,
        &config_text,
        Some(input_hash),
        started,
    )
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let started = now_s();
    let cfg = train_config(&a.settings)?;
    if a.jobs == 0 {
        return Err(invalid("--jobs must be at least 1"));
    }
    let (recs, input_hash) = load_data(&a.data)?;
    std::fs::create_dir_all(&a.out).map_err(runtime)?;
    let config_text = cfg.to_kv().to_text();
    std::fs::write(a.out.join("config.txt"), &config_text).map_err(runtime)?;
    let outcome = train::run_loocv(&recs, &cfg, Some(&a.out), a.jobs).map_err(|e| match e {
        train::TrainError::Features(_)
        | train::TrainError::Preprocess(_)
        | train::TrainError::InvalidConfig(_) => invalid(e),
        other => runtime(other),
    })?;
    let subjects: Vec<SubjectPredictions> = outcome
        .folds
        .iter()
        .map(|f| f.subject_predictions())
        .collect();
    eval::write_residuals(&subjects, &a.out).map_err(runtime)?;
    write_json(&a.out.join("aggregate.json"), &outcome.aggregate)?;
    for f in &outcome.folds {
        eprintln!(
            "fold {:>2} {:<6} MAE {:7.2} cm  baseline {:7.2} cm",
            f.fold, f.test_subject, f.mae_cm, f.baseline_mae_cm
        );
    }
    eprintln!(
        "mean MAE {:.2} cm (min {:.2}, max {:.2}); baseline {:.2} cm",
        outcome.aggregate.mean_mae_cm,
        outcome.aggregate.min_mae_cm,
        outcome.aggregate.max_mae_cm,
        outcome.aggregate.mean_baseline_mae_cm
    );
    write_run_manifest(
        &a.out,
        "train",
        cfg.seed,
        &config_text,
        Some(input_hash),
        started,
    )
}

fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let started = now_s();
    require_file(&a.checkpoint)?;
    require_file(&a.manifest)?;
    let manifest_text = std::fs::read_to_string(&a.manifest).map_err(invalid)?;
    let manifest = PipelineManifest::from_json(&manifest_text).map_err(invalid)?;
    let (params, stored_hash) = nn::load_checkpoint(&a.checkpoint).map_err(invalid)?;
    if stored_hash != manifest.hash() {
        return Err(invalid(
            "checkpoint was trained with a different pipeline manifest",
        ));
    }
    let (recs, input_hash) = load_data(&a.data)?;
    let pipeline = preprocess::PipelineConfig {
        cleaning: manifest.cleaning,
        balance: manifest.balance,
        sequence_len: manifest.sequence_len,
        ..Default::default()
    };
    let data = train::prepare(&recs, &pipeline).map_err(invalid)?;
    let mut subjects = Vec::new();
    for (id, frames) in data.subject_ids.iter().zip(&data.frames) {
        let batch = manifest
            .apply(std::slice::from_ref(frames))
            .map_err(invalid)?;
        if batch.target_depth_cm.iter().any(|d| d.is_nan()) {
            return Err(invalid(format!("subject `{id}` lacks ground-truth depth")));
        }
        let predictions_cm = train::predict_cm(&params, &manifest, &batch).map_err(runtime)?;
        subjects.push(SubjectPredictions {
            subject: id.clone(),
            baseline_cm: train::baseline_for_targets(frames, &batch.target_frames),
            target_frames: batch.target_frames,
            truths_cm: batch.target_depth_cm,
            predictions_cm,
        });
    }
    let report = EvalReport::build(&subjects).map_err(runtime)?;
    eval::emit_report(&report, &a.out).map_err(runtime)?;
    eval::write_residuals(&subjects, &a.out).map_err(runtime)?;
    eprintln!(
        "MAE {:.2} cm; baseline {:.2} cm over {} sequences",
        report.mae_cm, report.baseline_mae_cm, report.n
    );
    write_run_manifest(&a.out, "eval", 0, &manifest_text, Some(input_hash), started)
}

fn cmd_report(a: &ReportArgs) -> Result<(), CliError> {
    require_file(&a.input)?;
    let text = std::fs::read_to_string(&a.input).map_err(runtime)?;
    let report = EvalReport::from_json(&text).map_err(invalid)?;
    eval::emit_report(&report, &a.out).map_err(runtime)
}

#[derive(Serialize)]
struct Description {
    toolkit_version: &'static str,
    features: Vec<features::FeatureDescription>,
    presets: Vec<(String, TrainConfig)>,
    synth_defaults: SynthConfig,
    seed_env: &'static str,
}

fn cmd_describe() -> Result<(), CliError> {
    let d = Description {
        toolkit_version: env!("CARGO_PKG_VERSION"),
        features: feature_table(),
        presets: vec![
            ("toy".into(), TrainConfig::toy()),
            ("paper".into(), TrainConfig::paper()),
        ],
        synth_defaults: SynthConfig::default(),
        seed_env: SEED_ENV,
    };
    print_stdout(&serde_json::to_string_pretty(&d).map_err(runtime)?)
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Features(a) => cmd_features(a),
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a),
        Command::Describe => cmd_describe(),
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
