//! Evaluation suite: MAE, residual distribution, error categories, error by
//! depth range, the geometric vergence baseline, and report files.
//!
//! Residuals are `prediction - truth`, so a positive mean means the model
//! overestimates depth.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SubjectRecording;
use crate::features::{self, FeatureError, DEFAULT_DEPTH_CAP};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} predictions vs {1} truths")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("i/o: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("report: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn check(preds: &[f64], truths: &[f64]) -> Result<(), EvalError> {
    if preds.len() != truths.len() {
        return Err(EvalError::LengthMismatch(preds.len(), truths.len()));
    }
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(())
}

pub fn mae(preds: &[f64], truths: &[f64]) -> Result<f64, EvalError> {
    check(preds, truths)?;
    Ok(preds
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / preds.len() as f64)
}

pub fn residuals(preds: &[f64], truths: &[f64]) -> Result<Vec<f64>, EvalError> {
    check(preds, truths)?;
    Ok(preds.iter().zip(truths).map(|(p, t)| p - t).collect())
}

/// Percentages of `|r| < 1`, `1 <= |r| < 10`, `10 <= |r| < 20` and
/// `|r| >= 20` (cm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Categories {
    pub below_1_cm: f64,
    pub from_1_to_10_cm: f64,
    pub from_10_to_20_cm: f64,
    pub above_20_cm: f64,
}

impl Categories {
    pub fn total(&self) -> f64 {
        self.below_1_cm + self.from_1_to_10_cm + self.from_10_to_20_cm + self.above_20_cm
    }
}

pub fn residual_categories(residuals: &[f64]) -> Result<Categories, EvalError> {
    if residuals.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut counts = [0usize; 4];
    for r in residuals {
        let a = r.abs();
        let k = if a < 1.0 {
            0
        } else if a < 10.0 {
            1
        } else if a < 20.0 {
            2
        } else {
            3
        };
        counts[k] += 1;
    }
    let n = residuals.len() as f64;
    let pct = |c: usize| 100.0 * c as f64 / n;
    Ok(Categories {
        below_1_cm: pct(counts[0]),
        from_1_to_10_cm: pct(counts[1]),
        from_10_to_20_cm: pct(counts[2]),
        above_20_cm: pct(counts[3]),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

pub const HISTOGRAM_RANGE: (f64, f64) = (-50.0, 50.0);
pub const HISTOGRAM_BIN: f64 = 2.0;

/// Fixed-width histogram over `[lo, hi)`; values outside land in the edge
/// bins.
pub fn histogram(values: &[f64], lo: f64, hi: f64, width: f64) -> Histogram {
    let n_bins = ((hi - lo) / width).round().max(1.0) as usize;
    let edges = (0..=n_bins).map(|k| lo + k as f64 * width).collect();
    let mut counts = vec![0u64; n_bins];
    for &v in values {
        let k = ((v - lo) / width).floor();
        counts[(k.max(0.0) as usize).min(n_bins - 1)] += 1;
    }
    Histogram { edges, counts }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthBin {
    /// cm, inclusive
    pub lo: f64,
    /// cm, exclusive
    pub hi: f64,
    pub n: usize,
    pub mae_cm: f64,
}

/// Mean absolute error per truth-depth bin `[lo, lo + width)`; empty bins
/// are omitted.
pub fn binned_depth_error(
    preds: &[f64],
    truths: &[f64],
    bin_width: f64,
) -> Result<Vec<DepthBin>, EvalError> {
    check(preds, truths)?;
    let mut bins: BTreeMap<i64, (usize, f64)> = BTreeMap::new();
    for (p, t) in preds.iter().zip(truths) {
        let e = bins.entry((t / bin_width).floor() as i64).or_default();
        e.0 += 1;
        e.1 += (p - t).abs();
    }
    Ok(bins
        .into_iter()
        .map(|(k, (n, sum))| DepthBin {
            lo: k as f64 * bin_width,
            hi: (k + 1) as f64 * bin_width,
            n,
            mae_cm: sum / n as f64,
        })
        .collect())
}

/// Per-frame vergence depth from eye geometry alone.
pub fn geometric_baseline(recording: &SubjectRecording) -> Result<Vec<f64>, FeatureError> {
    recording
        .samples
        .iter()
        .map(|s| {
            let ipd = features::interpupillary_distance(s.origin_l, s.origin_r);
            let va = features::vergence_angle(s.dir_l, s.dir_r).map_err(|_| {
                FeatureError::ZeroDirectionVector {
                    frame_index: s.frame_index,
                }
            })?;
            Ok(features::vergence_depth(ipd, va, DEFAULT_DEPTH_CAP))
        })
        .collect()
}

/// Predictions for one held-out subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPredictions {
    pub subject: String,
    pub target_frames: Vec<u64>,
    pub predictions_cm: Vec<f64>,
    pub truths_cm: Vec<f64>,
    pub baseline_cm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub subject: String,
    pub n: usize,
    pub mae_cm: f64,
    pub baseline_mae_cm: f64,
}

pub const DEPTH_BIN_WIDTH: f64 = 10.0;
pub const REPORT_VERSION: u32 = 1;

/// The full evaluation over every held-out subject. Field order is the
/// serialization order of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub n: usize,
    pub mae_cm: f64,
    pub baseline_mae_cm: f64,
    pub residual_mean_cm: f64,
    pub residual_sd_cm: f64,
    pub mean_subject_mae_cm: f64,
    pub min_subject_mae_cm: f64,
    pub max_subject_mae_cm: f64,
    pub categories: Categories,
    pub histogram: Histogram,
    pub depth_bins: Vec<DepthBin>,
    pub baseline_depth_bins: Vec<DepthBin>,
    pub subjects: Vec<SubjectSummary>,
}

impl EvalReport {
    pub fn build(subjects: &[SubjectPredictions]) -> Result<Self, EvalError> {
        if subjects.is_empty() {
            return Err(EvalError::EmptyInput);
        }
        let (mut preds, mut truths, mut base) = (Vec::new(), Vec::new(), Vec::new());
        let mut summaries = Vec::with_capacity(subjects.len());
        for s in subjects {
            check(&s.baseline_cm, &s.truths_cm)?;
            summaries.push(SubjectSummary {
                subject: s.subject.clone(),
                n: s.truths_cm.len(),
                mae_cm: mae(&s.predictions_cm, &s.truths_cm)?,
                baseline_mae_cm: mae(&s.baseline_cm, &s.truths_cm)?,
            });
            preds.extend_from_slice(&s.predictions_cm);
            truths.extend_from_slice(&s.truths_cm);
            base.extend_from_slice(&s.baseline_cm);
        }
        let res = residuals(&preds, &truths)?;
        let subject_maes: Vec<f64> = summaries.iter().map(|s| s.mae_cm).collect();
        Ok(Self {
            version: REPORT_VERSION,
            n: res.len(),
            mae_cm: mae(&preds, &truths)?,
            baseline_mae_cm: mae(&base, &truths)?,
            residual_mean_cm: crate::stats::mean(&res),
            residual_sd_cm: crate::stats::std_dev(&res),
            mean_subject_mae_cm: crate::stats::mean(&subject_maes),
            min_subject_mae_cm: subject_maes.iter().copied().fold(f64::INFINITY, f64::min),
            max_subject_mae_cm: subject_maes
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max),
            categories: residual_categories(&res)?,
            histogram: histogram(&res, HISTOGRAM_RANGE.0, HISTOGRAM_RANGE.1, HISTOGRAM_BIN),
            depth_bins: binned_depth_error(&preds, &truths, DEPTH_BIN_WIDTH)?,
            baseline_depth_bins: binned_depth_error(&base, &truths, DEPTH_BIN_WIDTH)?,
            subjects: summaries,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Writes `report.json`, `binned_errors.csv`, `histogram.csv` and two SVG
/// charts into `out_dir`.
pub fn emit_report(report: &EvalReport, out_dir: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("report.json"), report.to_json())?;

    let mut w = csv::Writer::from_path(out_dir.join("binned_errors.csv"))?;
    w.write_record(["lo_cm", "hi_cm", "n", "mae_cm", "baseline_mae_cm"])?;
    for (b, base) in report.depth_bins.iter().zip(&report.baseline_depth_bins) {
        w.write_record([
            b.lo.to_string(),
            b.hi.to_string(),
            b.n.to_string(),
            b.mae_cm.to_string(),
            base.mae_cm.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out_dir.join("histogram.csv"))?;
    w.write_record(["lo_cm", "hi_cm", "count"])?;
    for (k, c) in report.histogram.counts.iter().enumerate() {
        let e = &report.histogram.edges;
        w.write_record([e[k].to_string(), e[k + 1].to_string(), c.to_string()])?;
    }
    w.flush()?;

    std::fs::write(
        out_dir.join("residual_histogram.svg"),
        histogram_svg(&report.histogram),
    )?;
    std::fs::write(
        out_dir.join("binned_errors.svg"),
        binned_svg(&report.depth_bins, &report.baseline_depth_bins),
    )?;
    Ok(())
}

/// Writes one row per prediction to `residuals.csv`.
pub fn write_residuals(subjects: &[SubjectPredictions], out_dir: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(out_dir)?;
    let mut w = csv::Writer::from_path(out_dir.join("residuals.csv"))?;
    w.write_record([
        "subject_id",
        "frame_index",
        "truth_cm",
        "pred_cm",
        "residual_cm",
        "baseline_cm",
    ])?;
    for s in subjects {
        for k in 0..s.truths_cm.len() {
            let (p, t) = (s.predictions_cm[k], s.truths_cm[k]);
            w.write_record([
                s.subject.clone(),
                s.target_frames[k].to_string(),
                t.to_string(),
                p.to_string(),
                (p - t).to_string(),
                s.baseline_cm[k].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;

fn svg_open(title: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n\
         <line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"black\"/>\n",
        W / 2.0,
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD,
    )
}

fn axis_label(s: &mut String, x: f64, y: f64, anchor: &str, text: &str) {
    let _ = writeln!(
        s,
        "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\" font-family=\"sans-serif\" font-size=\"10\">{text}</text>"
    );
}

pub fn histogram_svg(h: &Histogram) -> String {
    let mut s = svg_open("Residual distribution (cm)");
    let max = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bw = (W - 2.0 * PAD) / h.counts.len().max(1) as f64;
    for (k, &c) in h.counts.iter().enumerate() {
        let bh = (H - 2.0 * PAD) * c as f64 / max;
        let _ = writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"steelblue\"/>",
            PAD + k as f64 * bw,
            H - PAD - bh,
            (bw - 1.0).max(0.5),
            bh
        );
    }
    if let (Some(first), Some(last)) = (h.edges.first(), h.edges.last()) {
        axis_label(&mut s, PAD, H - PAD + 16.0, "middle", &first.to_string());
        axis_label(&mut s, W - PAD, H - PAD + 16.0, "middle", &last.to_string());
    }
    axis_label(
        &mut s,
        PAD - 6.0,
        PAD + 4.0,
        "end",
        &(max as u64).to_string(),
    );
    s.push_str("</svg>\n");
    s
}

fn polyline(s: &mut String, bins: &[DepthBin], x_range: (f64, f64), y_max: f64, colour: &str) {
    let pts: Vec<String> = bins
        .iter()
        .map(|b| {
            let xc = 0.5 * (b.lo + b.hi);
            let x = PAD + (W - 2.0 * PAD) * (xc - x_range.0) / (x_range.1 - x_range.0).max(1e-12);
            let y = H - PAD - (H - 2.0 * PAD) * b.mae_cm / y_max;
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(
        s,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\"/>",
        pts.join(" ")
    );
}

pub fn binned_svg(model: &[DepthBin], baseline: &[DepthBin]) -> String {
    let mut s = svg_open("Mean absolute error by depth range (cm)");
    let all = model.iter().chain(baseline);
    let lo = all.clone().map(|b| b.lo).fold(f64::INFINITY, f64::min);
    let hi = all.clone().map(|b| b.hi).fold(f64::NEG_INFINITY, f64::max);
    let y_max = all.map(|b| b.mae_cm).fold(0.0, f64::max).max(1e-9);
    if lo.is_finite() {
        polyline(&mut s, model, (lo, hi), y_max, "steelblue");
        polyline(&mut s, baseline, (lo, hi), y_max, "darkorange");
        axis_label(&mut s, PAD, H - PAD + 16.0, "middle", &lo.to_string());
        axis_label(&mut s, W - PAD, H - PAD + 16.0, "middle", &hi.to_string());
        axis_label(&mut s, PAD - 6.0, PAD + 4.0, "end", &format!("{y_max:.1}"));
    }
    axis_label(
        &mut s,
        W - PAD,
        PAD,
        "end",
        "blue: model, orange: vergence baseline",
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[10.0, 20.0], &[12.0, 16.0]).unwrap(), 3.0);
        assert!(matches!(
            mae(&[1.0], &[1.0, 2.0]),
            Err(EvalError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn categories_examples() {
        let c = residual_categories(&[0.5, 5.0, 15.0, 25.0]).unwrap();
        assert_eq!(
            (
                c.below_1_cm,
                c.from_1_to_10_cm,
                c.from_10_to_20_cm,
                c.above_20_cm
            ),
            (25.0, 25.0, 25.0, 25.0)
        );
        let c = residual_categories(&[0.0; 7]).unwrap();
        assert_eq!(c.below_1_cm, 100.0);
        assert!(residual_categories(&[]).is_err());
    }

    #[test]
    fn binned_examples() {
        let b = binned_depth_error(&[51.0, 49.0], &[50.0, 50.0], 10.0).unwrap();
        assert_eq!(b.len(), 1);
        let b = binned_depth_error(&[12.0, 14.0, 27.0], &[10.0, 19.9, 20.0], 10.0).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!((b[0].lo, b[0].n), (10.0, 2));
        assert!((b[0].mae_cm - (2.0 + 5.9) / 2.0).abs() < 1e-12);
        assert_eq!((b[1].lo, b[1].n, b[1].mae_cm), (20.0, 1, 7.0));
    }

    #[test]
    fn histogram_clips_tails() {
        let h = histogram(&[-80.0, -50.0, 0.0, 49.9, 50.0, 300.0], -50.0, 50.0, 2.0);
        assert_eq!(h.counts.len(), 50);
        assert_eq!(h.edges.len(), 51);
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[25], 1);
        assert_eq!(h.counts[49], 3);
    }
}
