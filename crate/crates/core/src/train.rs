//! Leave-one-subject-out training.
//!
//! Each fold fits the preprocessing pipeline on its training subjects,
//! trains a fresh network with shuffled mini-batches, and predicts the
//! held-out subject in centimetres. Every random choice is sub-seeded from
//! `(seed, fold, epoch)`, so folds are independent and may run in parallel.

use std::path::{Path, PathBuf};

use ndarray::Axis;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SubjectRecording;
use crate::eval::{self, SubjectPredictions};
use crate::features::{self, FeatureError, FeatureFrame, FeatureName};
use crate::kv::{KvError, KvMap};
use crate::nn::{self, AdamW, ModelConfig, ModelParams, NnError, OptimState};
use crate::preprocess::{
    self, Fold, PipelineConfig, PipelineManifest, PreprocessError, SequenceBatch,
};
use crate::rng::{self, tag};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Config(#[from] KvError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("fold {fold} (test subject `{subject}`): loss became {loss} at epoch {epoch}, batch {batch}")]
    DivergedLoss {
        fold: usize,
        subject: String,
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("unknown subject `{0}`")]
    UnknownSubject(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Toy,
    Paper,
    Custom,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "toy" => Ok(Self::Toy),
            "paper" => Ok(Self::Paper),
            "custom" => Ok(Self::Custom),
            other => Err(format!(
                "unknown preset `{other}` (expected toy, paper or custom)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub preset: Preset,
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Smooth-L1 threshold in scaled-target units.
    pub beta: f64,
    pub seed: u64,
    /// Stop once the epoch loss has not improved for this many epochs.
    pub patience: Option<usize>,
    pub pipeline: PipelineConfig,
}

pub const CONFIG_KEYS: [&str; 19] = [
    "preset",
    "epochs",
    "batch_size",
    "lr",
    "weight_decay",
    "beta",
    "seed",
    "patience",
    "hidden_dim",
    "fc1_dim",
    "fc2_dim",
    "dropout_p",
    "sequence_len",
    "window_size",
    "threshold",
    "iqr_factor",
    "bin_width",
    "balance",
    "split_seed",
];

impl TrainConfig {
    /// Desk-scale settings.
    pub fn toy() -> Self {
        Self {
            preset: Preset::Toy,
            model: ModelConfig::toy(),
            epochs: 40,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.0906,
            beta: 0.75,
            seed: 42,
            patience: None,
            pipeline: PipelineConfig::default(),
        }
    }

    /// Full-size settings.
    pub fn paper() -> Self {
        Self {
            preset: Preset::Paper,
            model: ModelConfig::paper(),
            epochs: 2000,
            batch_size: 460,
            lr: 0.033,
            weight_decay: 0.0906,
            ..Self::toy()
        }
    }

    pub fn for_preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => Self::paper(),
            Preset::Toy | Preset::Custom => Self {
                preset,
                ..Self::toy()
            },
        }
    }

    /// Starts from the preset named by `preset` (toy by default) and
    /// overrides every key present in `kv`.
    pub fn from_kv(kv: &KvMap) -> Result<Self, TrainError> {
        kv.check_keys(&CONFIG_KEYS)?;
        let preset = match kv.get::<String>("preset")? {
            Some(p) => p.parse().map_err(TrainError::InvalidConfig)?,
            None => Preset::Toy,
        };
        let mut c = Self::for_preset(preset);
        kv.apply("epochs", &mut c.epochs)?;
        kv.apply("batch_size", &mut c.batch_size)?;
        kv.apply("lr", &mut c.lr)?;
        kv.apply("weight_decay", &mut c.weight_decay)?;
        kv.apply("beta", &mut c.beta)?;
        kv.apply("seed", &mut c.seed)?;
        if let Some(p) = kv.get::<usize>("patience")? {
            c.patience = Some(p);
        }
        kv.apply("hidden_dim", &mut c.model.hidden_dim)?;
        kv.apply("fc1_dim", &mut c.model.fc1_dim)?;
        kv.apply("fc2_dim", &mut c.model.fc2_dim)?;
        kv.apply("dropout_p", &mut c.model.dropout_p)?;
        kv.apply("sequence_len", &mut c.model.sequence_len)?;
        c.pipeline.sequence_len = c.model.sequence_len;
        kv.apply("window_size", &mut c.pipeline.cleaning.window_size)?;
        kv.apply("threshold", &mut c.pipeline.cleaning.threshold)?;
        kv.apply("iqr_factor", &mut c.pipeline.cleaning.iqr_factor)?;
        kv.apply("bin_width", &mut c.pipeline.balance.bin_width)?;
        kv.apply("balance", &mut c.pipeline.balance_train)?;
        kv.apply("split_seed", &mut c.pipeline.split_seed)?;
        c.validate()?;
        Ok(c)
    }

    /// Canonical `key = value` form; feeding it back to [`Self::from_kv`]
    /// reproduces the config.
    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        kv.set(
            "preset",
            serde_json::to_value(self.preset).unwrap().as_str().unwrap(),
        );
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("lr", self.lr);
        kv.set("weight_decay", self.weight_decay);
        kv.set("beta", self.beta);
        kv.set("seed", self.seed);
        if let Some(p) = self.patience {
            kv.set("patience", p);
        }
        kv.set("hidden_dim", self.model.hidden_dim);
        kv.set("fc1_dim", self.model.fc1_dim);
        kv.set("fc2_dim", self.model.fc2_dim);
        kv.set("dropout_p", self.model.dropout_p);
        kv.set("sequence_len", self.model.sequence_len);
        kv.set("window_size", self.pipeline.cleaning.window_size);
        kv.set("threshold", self.pipeline.cleaning.threshold);
        kv.set("iqr_factor", self.pipeline.cleaning.iqr_factor);
        kv.set("bin_width", self.pipeline.balance.bin_width);
        kv.set("balance", self.pipeline.balance_train);
        kv.set("split_seed", self.pipeline.split_seed);
        kv
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if self.model.sequence_len != self.pipeline.sequence_len {
            return bad("model and pipeline sequence lengths differ".into());
        }
        if self.pipeline.cleaning.window_size < 1
            || self.pipeline.cleaning.threshold.is_nan()
            || self.pipeline.cleaning.threshold <= 0.0
        {
            return bad("cleaning needs window_size >= 1 and threshold > 0".into());
        }
        if self.pipeline.balance.bin_width.is_nan() || self.pipeline.balance.bin_width <= 0.0 {
            return bad("bin_width must be positive".into());
        }
        self.model.validate()?;
        Ok(())
    }
}

/// Cleaned feature frames of every subject, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub subject_ids: Vec<String>,
    pub frames: Vec<Vec<FeatureFrame>>,
}

impl PreparedData {
    pub fn subject(&self, id: &str) -> Result<&[FeatureFrame], TrainError> {
        self.subject_ids
            .iter()
            .position(|s| s == id)
            .map(|k| self.frames[k].as_slice())
            .ok_or_else(|| TrainError::UnknownSubject(id.to_string()))
    }
}

/// Feature extraction followed by per-subject cleaning.
pub fn prepare(
    recordings: &[SubjectRecording],
    cfg: &PipelineConfig,
) -> Result<PreparedData, TrainError> {
    let frames = features::compute_all(recordings)?
        .iter()
        .map(|f| preprocess::clean_subject(f, &cfg.cleaning))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PreparedData {
        subject_ids: recordings.iter().map(|r| r.subject_id.clone()).collect(),
        frames,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_subject: String,
    pub train_subjects: Vec<String>,
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    pub target_frames: Vec<u64>,
    pub predictions_cm: Vec<f64>,
    pub truths_cm: Vec<f64>,
    /// Geometric vergence depth of the same frames.
    pub baseline_cm: Vec<f64>,
    pub mae_cm: f64,
    pub baseline_mae_cm: f64,
    pub manifest_hash: String,
    pub checkpoint: Option<PathBuf>,
}

impl FoldResult {
    pub fn subject_predictions(&self) -> SubjectPredictions {
        SubjectPredictions {
            subject: self.test_subject.clone(),
            target_frames: self.target_frames.clone(),
            predictions_cm: self.predictions_cm.clone(),
            truths_cm: self.truths_cm.clone(),
            baseline_cm: self.baseline_cm.clone(),
        }
    }
}

/// A trained fold: its model, its fitted pipeline and its result.
#[derive(Debug, Clone)]
pub struct TrainedFold {
    pub params: ModelParams,
    pub manifest: PipelineManifest,
    pub result: FoldResult,
}

/// Trains `params` on `batch` for `cfg.epochs` epochs and returns the mean
/// loss of each epoch.
pub fn fit_model(
    params: &mut ModelParams,
    batch: &SequenceBatch,
    cfg: &TrainConfig,
    fold: usize,
    subject: &str,
) -> Result<Vec<f64>, TrainError> {
    let mut opt = OptimState::new(&params.config, AdamW::new(cfg.lr, cfg.weight_decay));
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let (mut best, mut stale) = (f64::INFINITY, 0);
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(
            cfg.seed,
            &[tag::SHUFFLE, fold as u64, epoch as u64],
        ));
        let mut dropout_rng = rng::stream(cfg.seed, &[tag::DROPOUT, fold as u64, epoch as u64]);
        let (mut total, mut count) = (0.0, 0usize);
        for (k, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = batch.inputs.select(Axis(0), idx);
            let y: Vec<f64> = idx.iter().map(|&i| batch.targets[i]).collect();
            let (loss, grads, stats) =
                nn::loss_and_grad(params, &x, &y, cfg.beta, &mut dropout_rng)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(TrainError::DivergedLoss {
                    fold,
                    subject: subject.into(),
                    epoch,
                    batch: k,
                    loss,
                });
            }
            nn::adamw_step(&mut params.weights, &grads, &mut opt);
            stats.update_running(&mut params.running_mean, &mut params.running_var);
            total += loss * idx.len() as f64;
            count += idx.len();
        }
        let mean = total / count as f64;
        curve.push(mean);
        if let Some(p) = cfg.patience {
            if mean < best {
                best = mean;
                stale = 0;
            } else {
                stale += 1;
                if stale >= p {
                    break;
                }
            }
        }
    }
    Ok(curve)
}

/// Network initialized for a fold, with the output bias set to the mean
/// training target so the head starts centred on the target range.
pub fn init_model(cfg: &TrainConfig, fold: usize, batch: &SequenceBatch) -> ModelParams {
    let mut params = ModelParams::init(&cfg.model, rng::derive_seed(cfg.seed, &[fold as u64]));
    if !batch.is_empty() {
        params.weights.b_out[0] = batch.targets.iter().sum::<f64>() / batch.len() as f64;
    }
    params
}

/// Inverse-scaled predictions (cm) for every sequence of `batch`.
pub fn predict_cm(
    params: &ModelParams,
    manifest: &PipelineManifest,
    batch: &SequenceBatch,
) -> Result<Vec<f64>, TrainError> {
    const CHUNK: usize = 512;
    let mut out = Vec::with_capacity(batch.len());
    let idx: Vec<usize> = (0..batch.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        let x = batch.inputs.select(Axis(0), chunk);
        out.extend(
            nn::predict(params, &x)?
                .into_iter()
                .map(|p| manifest.target_scaler.inverse(p)),
        );
    }
    Ok(out)
}

/// Vergence depth feature of each target frame.
pub fn baseline_for_targets(frames: &[FeatureFrame], target_frames: &[u64]) -> Vec<f64> {
    let by_index: std::collections::HashMap<u64, f64> = frames
        .iter()
        .map(|f| (f.frame_index, f.get(FeatureName::VergenceDepth)))
        .collect();
    target_frames.iter().map(|i| by_index[i]).collect()
}

pub fn train_fold(
    data: &PreparedData,
    fold: &Fold,
    cfg: &TrainConfig,
) -> Result<TrainedFold, TrainError> {
    cfg.validate()?;
    let train: Vec<Vec<FeatureFrame>> = fold
        .train_ids
        .iter()
        .map(|id| data.subject(id).map(<[_]>::to_vec))
        .collect::<Result<_, _>>()?;
    let test_frames = data.subject(&fold.test_id)?;
    let (manifest, train_batch) = preprocess::fit_pipeline(
        &train,
        &cfg.pipeline,
        rng::derive_seed(cfg.seed, &[tag::BALANCE, fold.index as u64]),
    )?;
    let test_batch = manifest.apply(&[test_frames.to_vec()])?;

    let mut params = init_model(cfg, fold.index, &train_batch);
    let train_loss = fit_model(&mut params, &train_batch, cfg, fold.index, &fold.test_id)?;
    let predictions_cm = predict_cm(&params, &manifest, &test_batch)?;
    let truths_cm = test_batch.target_depth_cm.clone();
    let baseline_cm = baseline_for_targets(test_frames, &test_batch.target_frames);
    let mae_cm = eval::mae(&predictions_cm, &truths_cm)?;
    let baseline_mae_cm = eval::mae(&baseline_cm, &truths_cm)?;
    let result = FoldResult {
        fold: fold.index,
        test_subject: fold.test_id.clone(),
        train_subjects: fold.train_ids.clone(),
        train_loss,
        target_frames: test_batch.target_frames.clone(),
        predictions_cm,
        truths_cm,
        baseline_cm,
        mae_cm,
        baseline_mae_cm,
        manifest_hash: manifest.hash(),
        checkpoint: None,
    };
    Ok(TrainedFold {
        params,
        manifest,
        result,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_mae_cm: f64,
    pub min_mae_cm: f64,
    pub max_mae_cm: f64,
    pub mean_baseline_mae_cm: f64,
}

impl Aggregate {
    pub fn of(folds: &[FoldResult]) -> Self {
        let n = folds.len() as f64;
        Self {
            mean_mae_cm: folds.iter().map(|f| f.mae_cm).sum::<f64>() / n,
            min_mae_cm: folds.iter().map(|f| f.mae_cm).fold(f64::INFINITY, f64::min),
            max_mae_cm: folds
                .iter()
                .map(|f| f.mae_cm)
                .fold(f64::NEG_INFINITY, f64::max),
            mean_baseline_mae_cm: folds.iter().map(|f| f.baseline_mae_cm).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoocvOutcome {
    pub folds: Vec<FoldResult>,
    pub aggregate: Aggregate,
    pub report: eval::EvalReport,
}

/// Runs every leave-one-subject-out fold on `jobs` threads. When `out_dir`
/// is given, each completed fold immediately writes
/// `folds/fold_NN.json`, `folds/fold_NN.manifest.json` and
/// `folds/fold_NN.ckpt`; the evaluation report is written at the end.
pub fn run_loocv(
    recordings: &[SubjectRecording],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    jobs: usize,
) -> Result<LoocvOutcome, TrainError> {
    cfg.validate()?;
    let data = prepare(recordings, &cfg.pipeline)?;
    let folds = preprocess::loso_splits(&data.subject_ids, cfg.pipeline.split_seed)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir.join("folds"))?;
    }
    let run_one = |fold: &Fold| -> Result<FoldResult, TrainError> {
        let trained = train_fold(&data, fold, cfg)?;
        let mut result = trained.result;
        if let Some(dir) = out_dir {
            let stem = dir.join("folds").join(format!("fold_{:02}", fold.index));
            let ckpt = stem.with_extension("ckpt");
            nn::save_checkpoint(&ckpt, &trained.params, &result.manifest_hash)?;
            std::fs::write(
                stem.with_extension("manifest.json"),
                trained.manifest.to_json(),
            )?;
            result.checkpoint = Some(PathBuf::from("folds").join(ckpt.file_name().unwrap()));
            std::fs::write(
                stem.with_extension("json"),
                serde_json::to_string_pretty(&result).unwrap(),
            )?;
        }
        Ok(result)
    };
    let results: Vec<FoldResult> = if jobs <= 1 {
        folds.iter().map(run_one).collect::<Result<_, _>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        pool.install(|| folds.par_iter().map(run_one).collect::<Result<_, _>>())?
    };
    let aggregate = Aggregate::of(&results);
    let subjects: Vec<SubjectPredictions> = results
        .iter()
        .map(FoldResult::subject_predictions)
        .collect();
    let report = eval::EvalReport::build(&subjects)?;
    if let Some(dir) = out_dir {
        eval::emit_report(&report, dir)?;
    }
    Ok(LoocvOutcome {
        folds: results,
        aggregate,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_epochs_rejected() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::toy()
        };
        assert!(matches!(cfg.validate(), Err(TrainError::InvalidConfig(_))));
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::toy()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = TrainConfig::paper();
        cfg.patience = Some(4);
        cfg.seed = 9;
        assert_eq!(TrainConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        let kv = KvMap::parse("preset = toy\nepochs = 0\n").unwrap();
        assert!(TrainConfig::from_kv(&kv).is_err());
    }
}
