//! Builds an evaluation report from made-up predictions and writes its
//! tables and charts to a temporary directory.
//!
//! Run with `cargo run --example eval_report`.

use focal_depth::eval::{self, EvalReport, SubjectPredictions};
use focal_depth::rng;
use rand::Rng as _;

fn main() {
    let mut r = rng::stream(5, &[]);
    let subjects: Vec<SubjectPredictions> = (1..=3)
        .map(|k| {
            let truths: Vec<f64> = (0..400)
                .map(|i| 35.0 + 265.0 * f64::from(i) / 399.0)
                .collect();
            SubjectPredictions {
                subject: format!("s{k:02}"),
                target_frames: (0..400).collect(),
                predictions_cm: truths
                    .iter()
                    .map(|t| t + r.random_range(-15.0..15.0))
                    .collect(),
                baseline_cm: truths
                    .iter()
                    .map(|t| t * (1.0 + r.random_range(-0.3..0.3)))
                    .collect(),
                truths_cm: truths,
            }
        })
        .collect();
    let report = EvalReport::build(&subjects).expect("consistent lengths");
    println!(
        "MAE {:.2} cm, baseline {:.2} cm",
        report.mae_cm, report.baseline_mae_cm
    );
    let c = report.categories;
    println!(
        "|r| < 1: {:.1}%  1-10: {:.1}%  10-20: {:.1}%  >= 20: {:.1}%",
        c.below_1_cm, c.from_1_to_10_cm, c.from_10_to_20_cm, c.above_20_cm
    );
    let dir = std::env::temp_dir().join("focal_depth_eval_report");
    eval::emit_report(&report, &dir).expect("writable temp dir");
    println!(
        "wrote report.json, CSV tables and SVG charts to {}",
        dir.display()
    );
}
