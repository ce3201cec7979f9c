//! Cleaning, balancing, subject-wise splitting, two-stage robust
//! normalization, per-feature transform selection, target scaling and
//! sequence windowing.
//!
//! Every fitted statistic lives in a serializable struct; [`PipelineManifest`]
//! bundles them so that inference reuses the exact training-time values.
//! Fitting functions only ever see training-fold frames.

use std::collections::BTreeMap;

use ndarray::Array3;
use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::{feature_names, FeatureFrame, FEATURE_COUNT};
use crate::rng::{self, tag};
use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("IQR outlier removal needs at least 4 frames, got {0}")]
    TooFewFrames(usize),
    #[error("leave-one-subject-out needs at least 2 distinct subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("target range is degenerate (min = max = {0})")]
    DegenerateRange(f64),
    #[error("subject `{subject}` has {frames} frames, needs more than {sequence_len}")]
    SubjectTooShort {
        subject: String,
        frames: usize,
        sequence_len: usize,
    },
    #[error("frame {frame_index} of subject `{subject}` has no ground-truth depth")]
    MissingDepth { subject: String, frame_index: u64 },
    #[error("no training frames")]
    EmptyTrainingSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleaningConfig {
    pub window_size: usize,
    /// cm
    pub threshold: f64,
    pub iqr_factor: f64,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            window_size: 5,
            threshold: 10.0,
            iqr_factor: 1.5,
        }
    }
}

/// Drops frame `i` when its depth differs from the mean of the centred window
/// `[max(i - w/2, 0), min(i + w/2 + 1, N))` by more than `threshold`. All
/// decisions use the original series. Frames without depth are kept and do
/// not enter any window.
pub fn remove_target_anomalies(frames: &[FeatureFrame], cfg: &CleaningConfig) -> Vec<FeatureFrame> {
    let known: Vec<(usize, f64)> = frames
        .iter()
        .enumerate()
        .filter_map(|(i, f)| f.gt_depth.map(|d| (i, d)))
        .collect();
    let n = known.len();
    let half = cfg.window_size / 2;
    let mut drop = vec![false; frames.len()];
    for (k, &(i, d)) in known.iter().enumerate() {
        let start = k.saturating_sub(half);
        let end = (k + half + 1).min(n);
        let window = &known[start..end];
        let mean = window.iter().map(|(_, v)| v).sum::<f64>() / window.len() as f64;
        if (d - mean).abs() > cfg.threshold {
            drop[i] = true;
        }
    }
    frames
        .iter()
        .zip(drop)
        .filter(|(_, d)| !d)
        .map(|(f, _)| f.clone())
        .collect()
}

/// Tukey fences per feature column; a frame is dropped when any of its
/// features falls outside `[q1 - k iqr, q3 + k iqr]`.
pub fn remove_feature_outliers_iqr(
    frames: &[FeatureFrame],
    cfg: &CleaningConfig,
) -> Result<Vec<FeatureFrame>, PreprocessError> {
    if frames.len() < 4 {
        return Err(PreprocessError::TooFewFrames(frames.len()));
    }
    let mut keep = vec![true; frames.len()];
    let mut column = vec![0.0; frames.len()];
    for j in 0..FEATURE_COUNT {
        for (c, f) in column.iter_mut().zip(frames) {
            *c = f.features[j];
        }
        let (q1, _, q3) = stats::quartiles(&column);
        let spread = cfg.iqr_factor * (q3 - q1);
        let (lo, hi) = (q1 - spread, q3 + spread);
        for (k, &x) in keep.iter_mut().zip(&column) {
            if x < lo || x > hi {
                *k = false;
            }
        }
    }
    Ok(frames
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(f, _)| f.clone())
        .collect())
}

/// Both cleaning rules, target anomalies first.
pub fn clean_subject(
    frames: &[FeatureFrame],
    cfg: &CleaningConfig,
) -> Result<Vec<FeatureFrame>, PreprocessError> {
    remove_feature_outliers_iqr(&remove_target_anomalies(frames, cfg), cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceConfig {
    /// cm
    pub bin_width: f64,
    /// cm, `[lo, hi)`; depths outside land in the edge bins.
    pub range: (f64, f64),
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            bin_width: 10.0,
            range: (0.0, 600.0),
        }
    }
}

impl BalanceConfig {
    pub fn n_bins(&self) -> usize {
        ((self.range.1 - self.range.0) / self.bin_width)
            .ceil()
            .max(1.0) as usize
    }

    pub fn bin_of(&self, depth: f64) -> usize {
        let b = ((depth - self.range.0) / self.bin_width).floor();
        (b.max(0.0) as usize).min(self.n_bins() - 1)
    }
}

/// Resamples every non-empty depth bin to `ceil(mean count)`, where the mean
/// runs over non-empty bins only: with replacement when a bin is short,
/// without when it is long. Within a bin the drawn frames keep their
/// original order; bins are concatenated in ascending depth.
pub fn balance_by_bins(
    frames: &[FeatureFrame],
    cfg: &BalanceConfig,
    seed: u64,
) -> Result<Vec<FeatureFrame>, PreprocessError> {
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_bins()];
    for (i, f) in frames.iter().enumerate() {
        let d = f.gt_depth.ok_or_else(|| PreprocessError::MissingDepth {
            subject: f.subject_id.clone(),
            frame_index: f.frame_index,
        })?;
        bins[cfg.bin_of(d)].push(i);
    }
    let counts: Vec<usize> = bins.iter().map(Vec::len).filter(|&c| c > 0).collect();
    if counts.is_empty() {
        return Ok(Vec::new());
    }
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    let target = mean.ceil() as usize;

    let mut out = Vec::with_capacity(target * counts.len());
    for (b, members) in bins.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let mut rng = rng::stream(seed, &[tag::BALANCE, b as u64]);
        let len = members.len() as f64;
        let mut picked: Vec<usize> = if len < mean {
            (0..target)
                .map(|_| members[rng.random_range(0..members.len())])
                .collect()
        } else if len > mean {
            index::sample(&mut rng, members.len(), target)
                .into_iter()
                .map(|k| members[k])
                .collect()
        } else {
            members.clone()
        };
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| frames[i].clone()));
    }
    Ok(out)
}

/// One leave-one-subject-out fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train_ids: Vec<String>,
    pub test_id: String,
}

pub const DEFAULT_SPLIT_SEED: u64 = 42;

/// One fold per distinct subject. The fold order is a Fisher-Yates shuffle
/// of the subjects (in first-appearance order) driven by `seed`; training
/// ids keep first-appearance order.
pub fn loso_splits(subject_ids: &[String], seed: u64) -> Result<Vec<Fold>, PreprocessError> {
    let mut unique: Vec<String> = Vec::new();
    for id in subject_ids {
        if !unique.contains(id) {
            unique.push(id.clone());
        }
    }
    if unique.len() < 2 {
        return Err(PreprocessError::TooFewSubjects(unique.len()));
    }
    let mut order = unique.clone();
    order.shuffle(&mut rng::stream(seed, &[tag::SPLIT]));
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(index, test_id)| Fold {
            index,
            train_ids: unique
                .iter()
                .filter(|id| **id != test_id)
                .cloned()
                .collect(),
            test_id,
        })
        .collect())
}

/// Per-feature robust location and scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub median: Vec<f64>,
    /// Zero spreads are stored as 1.
    pub iqr: Vec<f64>,
}

fn robust_params<'a>(frames: impl Iterator<Item = &'a FeatureFrame> + Clone) -> ScalerParams {
    let mut median = Vec::with_capacity(FEATURE_COUNT);
    let mut iqr = Vec::with_capacity(FEATURE_COUNT);
    for j in 0..FEATURE_COUNT {
        let col: Vec<f64> = frames.clone().map(|f| f.features[j]).collect();
        let (q1, m, q3) = stats::quartiles(&col);
        let spread = q3 - q1;
        median.push(m);
        iqr.push(if spread > 0.0 { spread } else { 1.0 });
    }
    ScalerParams { median, iqr }
}

impl ScalerParams {
    fn apply_in_place(&self, frames: &mut [FeatureFrame]) {
        for f in frames {
            for (j, x) in f.features.iter_mut().enumerate() {
                *x = (*x - self.median[j]) / self.iqr[j];
            }
        }
    }
}

pub fn fit_global_scaler(train_frames: &[FeatureFrame]) -> Result<ScalerParams, PreprocessError> {
    if train_frames.is_empty() {
        return Err(PreprocessError::EmptyTrainingSet);
    }
    Ok(robust_params(train_frames.iter()))
}

pub fn apply_global_scaler(frames: &[FeatureFrame], params: &ScalerParams) -> Vec<FeatureFrame> {
    let mut out = frames.to_vec();
    params.apply_in_place(&mut out);
    out
}

/// Robust-scales each subject with its own median and IQR. Frames of one
/// subject need not be contiguous.
pub fn subject_normalize(frames: &[FeatureFrame]) -> Vec<FeatureFrame> {
    let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, f) in frames.iter().enumerate() {
        by_subject.entry(f.subject_id.as_str()).or_default().push(i);
    }
    let mut out = frames.to_vec();
    for idx in by_subject.values() {
        let params = robust_params(idx.iter().map(|&i| &frames[i]));
        for &i in idx {
            for (j, x) in out[i].features.iter_mut().enumerate() {
                *x = (*x - params.median[j]) / params.iqr[j];
            }
        }
    }
    out
}

/// Candidate transforms. Data that is not strictly positive (not
/// non-negative for `Sqrt`) is first shifted by the training minimum:
/// `ln(x - min + 1)`, `sqrt(x - min)` and Box-Cox of `x - min + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Log,
    Sqrt,
    BoxCox { lambda: f64 },
}

impl Transform {
    /// Offset added to (floored) inputs so the transform is defined on the
    /// whole training range.
    pub fn offset_for(self, train_min: f64) -> f64 {
        match self {
            Self::Identity => 0.0,
            Self::Sqrt if train_min >= 0.0 => 0.0,
            Self::Sqrt => -train_min,
            Self::Log | Self::BoxCox { .. } if train_min > 0.0 => 0.0,
            Self::Log | Self::BoxCox { .. } => 1.0 - train_min,
        }
    }
}

pub fn box_cox(y: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        y.ln()
    } else {
        (y.powf(lambda) - 1.0) / lambda
    }
}

/// λ grid for Box-Cox candidates: -2.0, -1.9, …, 2.0.
pub fn box_cox_grid() -> impl Iterator<Item = f64> {
    (-20..=20).map(|k| f64::from(k) / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureTransform {
    pub transform: Transform,
    /// Training minimum; inputs are floored at it so unseen values stay in
    /// the transform's domain.
    pub floor: f64,
    /// Added to the floored input before transforming.
    pub offset: f64,
    /// Skew/kurtosis distance reached on the training data; `None` when
    /// undefined (constant column).
    pub distance: Option<f64>,
}

impl FeatureTransform {
    pub fn new(transform: Transform, train_min: f64) -> Self {
        Self {
            transform,
            floor: train_min,
            offset: transform.offset_for(train_min),
            distance: None,
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        let z = x.max(self.floor) + self.offset;
        match self.transform {
            Transform::Identity => x,
            Transform::Log => z.ln(),
            Transform::Sqrt => z.sqrt(),
            Transform::BoxCox { lambda } => box_cox(z, lambda),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformChoice {
    pub per_feature: Vec<FeatureTransform>,
}

/// Picks, for one column, the candidate whose output is closest to normal
/// in (skewness, kurtosis). Earlier candidates win ties; identity is first.
pub fn select_transform(column: &[f64]) -> FeatureTransform {
    let min = column.iter().copied().fold(f64::INFINITY, f64::min);
    let finite = |d: f64| Some(d).filter(|d| d.is_finite());
    let identity = FeatureTransform {
        distance: finite(stats::normality_distance(column)),
        ..FeatureTransform::new(Transform::Identity, min)
    };
    if !min.is_finite() || identity.distance.is_none() {
        return identity;
    }
    let candidates = [Transform::Log, Transform::Sqrt]
        .into_iter()
        .chain(box_cox_grid().map(|lambda| Transform::BoxCox { lambda }));
    let mut best = identity;
    let mut best_d = stats::normality_distance(column);
    let mut buf = vec![0.0; column.len()];
    for transform in candidates {
        let cand = FeatureTransform::new(transform, min);
        for (b, &x) in buf.iter_mut().zip(column) {
            *b = cand.apply(x);
        }
        if buf.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let d = stats::normality_distance(&buf);
        if d < best_d {
            best_d = d;
            best = FeatureTransform {
                distance: Some(d),
                ..cand
            };
        }
    }
    best
}

pub fn select_transforms(train_frames: &[FeatureFrame]) -> TransformChoice {
    let per_feature = (0..FEATURE_COUNT)
        .map(|j| {
            let col: Vec<f64> = train_frames.iter().map(|f| f.features[j]).collect();
            select_transform(&col)
        })
        .collect();
    TransformChoice { per_feature }
}

pub fn apply_transforms(frames: &[FeatureFrame], choice: &TransformChoice) -> Vec<FeatureFrame> {
    let mut out = frames.to_vec();
    for f in &mut out {
        for (x, t) in f.features.iter_mut().zip(&choice.per_feature) {
            *x = t.apply(*x);
        }
    }
    out
}

/// Min-max map of training depths onto `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub y_min: f64,
    pub y_max: f64,
    pub a: f64,
    pub b: f64,
}

impl TargetScaler {
    pub fn fit(targets: &[f64]) -> Result<Self, PreprocessError> {
        Self::fit_range(targets, 0.0, 1000.0)
    }

    pub fn fit_range(targets: &[f64], a: f64, b: f64) -> Result<Self, PreprocessError> {
        if targets.is_empty() {
            return Err(PreprocessError::EmptyTrainingSet);
        }
        let (y_min, y_max) = targets
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
                (lo.min(y), hi.max(y))
            });
        if y_max.is_nan() || y_min.is_nan() || y_max <= y_min {
            return Err(PreprocessError::DegenerateRange(y_min));
        }
        Ok(Self { y_min, y_max, a, b })
    }

    pub fn scale(&self, y: f64) -> f64 {
        self.a + (y - self.y_min) * (self.b - self.a) / (self.y_max - self.y_min)
    }

    pub fn inverse(&self, y_scaled: f64) -> f64 {
        self.y_min + (y_scaled - self.a) * (self.y_max - self.y_min) / (self.b - self.a)
    }
}

pub fn scale_target(y: f64, scaler: &TargetScaler) -> f64 {
    scaler.scale(y)
}

pub fn inverse_scale_target(y_scaled: f64, scaler: &TargetScaler) -> f64 {
    scaler.inverse(y_scaled)
}

pub const SEQUENCE_LEN: usize = 10;

/// Overlapping windows of `L` frames with the depth of the following frame
/// as target.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    /// `[n_sequences, L, FEATURE_COUNT]`
    pub inputs: Array3<f64>,
    /// Scaled depth of the frame after each window; NaN when unknown.
    pub targets: Vec<f64>,
    /// Unscaled depth (cm) of the same frame; NaN when unknown.
    pub target_depth_cm: Vec<f64>,
    pub subject_ids: Vec<String>,
    /// Frame index of the target frame.
    pub target_frames: Vec<u64>,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn sequence_len(&self) -> usize {
        self.inputs.shape()[1]
    }
}

/// Windows `S_n = frames[n..n+L]` with target `frames[n+L]`; `N - L` windows
/// per subject, never crossing subjects.
pub fn make_sequences(
    subjects: &[Vec<FeatureFrame>],
    sequence_len: usize,
    scaler: Option<&TargetScaler>,
) -> Result<SequenceBatch, PreprocessError> {
    let mut total = 0;
    for frames in subjects {
        if frames.len() <= sequence_len {
            return Err(PreprocessError::SubjectTooShort {
                subject: frames
                    .first()
                    .map(|f| f.subject_id.clone())
                    .unwrap_or_default(),
                frames: frames.len(),
                sequence_len,
            });
        }
        total += frames.len() - sequence_len;
    }
    let mut inputs = Array3::<f64>::zeros((total, sequence_len, FEATURE_COUNT));
    let mut targets = Vec::with_capacity(total);
    let mut target_depth_cm = Vec::with_capacity(total);
    let mut subject_ids = Vec::with_capacity(total);
    let mut target_frames = Vec::with_capacity(total);
    let mut row = 0;
    for frames in subjects {
        for n in 0..frames.len() - sequence_len {
            for (t, f) in frames[n..n + sequence_len].iter().enumerate() {
                for (j, &x) in f.features.iter().enumerate() {
                    inputs[[row, t, j]] = x;
                }
            }
            let next = &frames[n + sequence_len];
            let depth = next.gt_depth.unwrap_or(f64::NAN);
            target_depth_cm.push(depth);
            targets.push(match scaler {
                Some(s) => s.scale(depth),
                None => depth,
            });
            subject_ids.push(next.subject_id.clone());
            target_frames.push(next.frame_index);
            row += 1;
        }
    }
    Ok(SequenceBatch {
        inputs,
        targets,
        target_depth_cm,
        subject_ids,
        target_frames,
    })
}

/// Every fitted quantity of one fold, plus the settings needed to replay the
/// pipeline on new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub version: u32,
    pub feature_names: Vec<String>,
    pub cleaning: CleaningConfig,
    pub balance: BalanceConfig,
    pub sequence_len: usize,
    pub train_subjects: Vec<String>,
    pub global_scaler: ScalerParams,
    pub transforms: TransformChoice,
    pub target_scaler: TargetScaler,
}

impl PipelineManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    /// Normalizes, transforms and windows the (already cleaned) frames of
    /// each subject.
    pub fn apply(&self, subjects: &[Vec<FeatureFrame>]) -> Result<SequenceBatch, PreprocessError> {
        let prepared: Vec<Vec<FeatureFrame>> = subjects
            .iter()
            .map(|frames| {
                let global = apply_global_scaler(frames, &self.global_scaler);
                apply_transforms(&subject_normalize(&global), &self.transforms)
            })
            .collect();
        make_sequences(&prepared, self.sequence_len, Some(&self.target_scaler))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub cleaning: CleaningConfig,
    pub balance: BalanceConfig,
    pub sequence_len: usize,
    /// Balance training subjects before fitting.
    pub balance_train: bool,
    /// Seed of the fold-order shuffle.
    pub split_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cleaning: CleaningConfig::default(),
            balance: BalanceConfig::default(),
            sequence_len: SEQUENCE_LEN,
            balance_train: true,
            split_seed: DEFAULT_SPLIT_SEED,
        }
    }
}

/// Stable 64-bit key of a subject id for sub-seeding.
pub fn subject_key(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Fits the pipeline on cleaned training subjects and returns the manifest
/// together with the training sequences.
pub fn fit_pipeline(
    train_subjects: &[Vec<FeatureFrame>],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<(PipelineManifest, SequenceBatch), PreprocessError> {
    let balanced: Vec<Vec<FeatureFrame>> = if cfg.balance_train {
        train_subjects
            .iter()
            .map(|frames| {
                let key = frames
                    .first()
                    .map(|f| subject_key(&f.subject_id))
                    .unwrap_or(0);
                balance_by_bins(frames, &cfg.balance, rng::derive_seed(seed, &[key]))
            })
            .collect::<Result<_, _>>()?
    } else {
        train_subjects.to_vec()
    };
    let pooled: Vec<FeatureFrame> = balanced.iter().flatten().cloned().collect();
    let global_scaler = fit_global_scaler(&pooled)?;
    let normalized: Vec<Vec<FeatureFrame>> = balanced
        .iter()
        .map(|frames| subject_normalize(&apply_global_scaler(frames, &global_scaler)))
        .collect();
    let pooled_norm: Vec<FeatureFrame> = normalized.iter().flatten().cloned().collect();
    let transforms = select_transforms(&pooled_norm);
    let mut depths = Vec::with_capacity(pooled.len());
    for f in &pooled {
        depths.push(f.gt_depth.ok_or_else(|| PreprocessError::MissingDepth {
            subject: f.subject_id.clone(),
            frame_index: f.frame_index,
        })?);
    }
    let target_scaler = TargetScaler::fit(&depths)?;
    let transformed: Vec<Vec<FeatureFrame>> = normalized
        .iter()
        .map(|fr| apply_transforms(fr, &transforms))
        .collect();
    let batch = make_sequences(&transformed, cfg.sequence_len, Some(&target_scaler))?;
    let manifest = PipelineManifest {
        version: 1,
        feature_names: feature_names().into_iter().map(String::from).collect(),
        cleaning: cfg.cleaning,
        balance: cfg.balance,
        sequence_len: cfg.sequence_len,
        train_subjects: train_subjects
            .iter()
            .filter_map(|f| f.first().map(|x| x.subject_id.clone()))
            .collect(),
        global_scaler,
        transforms,
        target_scaler,
    };
    Ok((manifest, batch))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(subject: &str, i: u64, depth: f64, feats: &[f64]) -> FeatureFrame {
        let mut features = [0.0; FEATURE_COUNT];
        features[..feats.len()].copy_from_slice(feats);
        FeatureFrame {
            subject_id: subject.into(),
            frame_index: i,
            features,
            gt_depth: Some(depth),
        }
    }

    fn depths(frames: &[FeatureFrame]) -> Vec<f64> {
        frames.iter().map(|f| f.gt_depth.unwrap()).collect()
    }

    #[test]
    fn anomaly_window_rule() {
        // window means: 100, 112.5, 110, 112.5, 116.67 -> indices 1, 3, 4 exceed 10 cm
        let series = [100.0, 100.0, 100.0, 150.0, 100.0];
        let frames: Vec<_> = series
            .iter()
            .enumerate()
            .map(|(i, &d)| frame("s", i as u64, d, &[]))
            .collect();
        let kept = remove_target_anomalies(&frames, &CleaningConfig::default());
        let idx: Vec<u64> = kept.iter().map(|f| f.frame_index).collect();
        assert_eq!(idx, vec![0, 2]);
        assert!(!idx.contains(&3));
    }

    #[test]
    fn anomaly_rule_edge_cases() {
        let frames: Vec<_> = (0..20).map(|i| frame("s", i, 80.0, &[])).collect();
        assert_eq!(
            remove_target_anomalies(&frames, &CleaningConfig::default()).len(),
            20
        );
        let wild: Vec<_> = (0..20)
            .map(|i| frame("s", i, (i * i * 37 % 500) as f64, &[]))
            .collect();
        let cfg = CleaningConfig {
            threshold: f64::INFINITY,
            ..CleaningConfig::default()
        };
        assert_eq!(remove_target_anomalies(&wild, &cfg), wild);
    }

    #[test]
    fn iqr_rule() {
        let frames: Vec<_> = [1.0, 2.0, 3.0, 4.0, 100.0]
            .iter()
            .enumerate()
            .map(|(i, &x)| frame("s", i as u64, 50.0, &[x]))
            .collect();
        let kept = remove_feature_outliers_iqr(&frames, &CleaningConfig::default()).unwrap();
        assert_eq!(kept.len(), 4);
        assert!(kept.iter().all(|f| f.features[0] < 100.0));

        let flat: Vec<_> = (0..6).map(|i| frame("s", i, 50.0, &[3.0, -1.0])).collect();
        assert_eq!(
            remove_feature_outliers_iqr(&flat, &CleaningConfig::default())
                .unwrap()
                .len(),
            6
        );
        assert_eq!(
            remove_feature_outliers_iqr(&flat[..3], &CleaningConfig::default()),
            Err(PreprocessError::TooFewFrames(3))
        );
    }

    #[test]
    fn balancing_equalizes_bins() {
        let mut frames = Vec::new();
        let mut i = 0;
        for (bin, count) in [(5.0, 5), (15.0, 10), (25.0, 15)] {
            for _ in 0..count {
                frames.push(frame("s", i, bin, &[i as f64]));
                i += 1;
            }
        }
        let out = balance_by_bins(&frames, &BalanceConfig::default(), 1).unwrap();
        assert_eq!(out.len(), 30);
        for bin in [5.0, 15.0, 25.0] {
            assert_eq!(depths(&out).iter().filter(|&&d| d == bin).count(), 10);
        }
        // whole frames are duplicated, so feature/target pairs survive
        for f in &out {
            let orig = &frames[f.features[0] as usize];
            assert_eq!(orig, f);
        }
    }

    #[test]
    fn balancing_single_bin_is_identity() {
        let frames: Vec<_> = (0..7).map(|i| frame("s", i, 42.0, &[i as f64])).collect();
        assert_eq!(
            balance_by_bins(&frames, &BalanceConfig::default(), 3).unwrap(),
            frames
        );
    }

    #[test]
    fn loso_two_subjects() {
        let ids = vec!["A".to_string(), "B".to_string()];
        let folds = loso_splits(&ids, DEFAULT_SPLIT_SEED).unwrap();
        assert_eq!(folds.len(), 2);
        for f in &folds {
            assert_eq!(f.train_ids.len(), 1);
            assert_ne!(f.train_ids[0], f.test_id);
        }
        assert_eq!(folds, loso_splits(&ids, DEFAULT_SPLIT_SEED).unwrap());
        assert_eq!(
            loso_splits(&ids[..1], 42),
            Err(PreprocessError::TooFewSubjects(1))
        );
    }

    #[test]
    fn global_scaler_example() {
        let frames: Vec<_> = (1..=5)
            .map(|i| frame("s", i, 50.0, &[i as f64, 7.0]))
            .collect();
        let p = fit_global_scaler(&frames).unwrap();
        assert_eq!((p.median[0], p.iqr[0]), (3.0, 2.0));
        assert_eq!(p.iqr[1], 1.0);
        let out = apply_global_scaler(&frames, &p);
        let col: Vec<f64> = out.iter().map(|f| f.features[0]).collect();
        assert_eq!(col, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(out.iter().all(|f| f.features[1] == 0.0));
    }

    #[test]
    fn subject_normalization_removes_baselines() {
        let a: Vec<_> = (0..9)
            .map(|i| frame("a", i, 50.0, &[(i as f64).powi(2), 1.0]))
            .collect();
        let b: Vec<_> = (0..9)
            .map(|i| frame("b", i, 50.0, &[(i as f64).powi(2) * 3.0 + 40.0, 9.0]))
            .collect();
        let all: Vec<_> = a.iter().chain(&b).cloned().collect();
        let out = subject_normalize(&all);
        for i in 0..9 {
            assert!((out[i].features[0] - out[i + 9].features[0]).abs() < 1e-12);
        }
        let single = subject_normalize(&[frame("z", 0, 1.0, &[5.0, 6.0])]);
        assert!(single[0].features.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn constant_feature_keeps_identity() {
        let t = select_transform(&[4.0; 50]);
        assert_eq!(t.transform, Transform::Identity);
    }

    #[test]
    fn target_scaler_examples() {
        let s = TargetScaler::fit(&[35.0, 300.0, 100.0]).unwrap();
        assert_eq!(s.scale(35.0), 0.0);
        assert_eq!(s.scale(300.0), 1000.0);
        assert!((s.scale(167.5) - 500.0).abs() < 1e-12);
        assert_eq!(
            TargetScaler::fit(&[5.0, 5.0]),
            Err(PreprocessError::DegenerateRange(5.0))
        );
    }

    #[test]
    fn sequence_counts() {
        let subj = |id: &str, n: u64| -> Vec<FeatureFrame> {
            (0..n)
                .map(|i| frame(id, i, i as f64, &[i as f64]))
                .collect()
        };
        let b = make_sequences(&[subj("a", 100)], 10, None).unwrap();
        assert_eq!(b.len(), 90);
        let b = make_sequences(&[subj("a", 11)], 10, None).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.targets[0], 10.0);
        assert_eq!(b.inputs[[0, 9, 0]], 9.0);
        let b = make_sequences(&[subj("a", 12), subj("b", 12)], 10, None).unwrap();
        assert_eq!(b.len(), 4);
        assert_eq!(b.subject_ids, vec!["a", "a", "b", "b"]);
        assert!(matches!(
            make_sequences(&[subj("c", 10)], 10, None),
            Err(PreprocessError::SubjectTooShort { frames: 10, .. })
        ));
    }
}
