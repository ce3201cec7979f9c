//! Generates a small synthetic dataset and prints a per-subject summary.
//!
//! Run with `cargo run --example synth_recordings`.

use focal_depth::dataset;
use focal_depth::synth::{self, SynthConfig};

fn main() {
    let cfg = SynthConfig {
        n_subjects: 3,
        frames_per_subject: 500,
        ..SynthConfig::default()
    };
    let recs = synth::generate(&cfg).expect("valid config");
    for rec in &recs {
        let depths: Vec<f64> = rec.samples.iter().filter_map(|s| s.gt_depth).collect();
        let lo = depths.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = depths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ipd = (rec.samples[0].origin_r - rec.samples[0].origin_l).norm();
        println!(
            "{}: {} frames, ipd {ipd:.2} cm, depth {lo:.1}..{hi:.1} cm",
            rec.subject_id,
            rec.len()
        );
    }
    let mut csv = Vec::new();
    dataset::write_csv(&recs, &mut csv).expect("in-memory write");
    let header = String::from_utf8_lossy(&csv);
    println!("header: {}", header.lines().next().unwrap_or_default());
    println!("{} rows, {} bytes", dataset::sample_count(&recs), csv.len());
}
