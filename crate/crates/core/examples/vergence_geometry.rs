//! Recovers target depth from eye geometry alone and shows how angular
//! noise grows into depth error with distance.
//!
//! Run with `cargo run --example vergence_geometry`.

use focal_depth::eval;
use focal_depth::features::{self, DEFAULT_DEPTH_CAP};
use focal_depth::synth::{self, SynthConfig};

fn main() {
    let ipd: f64 = 6.3;
    for depth in [40.0, 100.0, 200.0, 300.0] {
        let half = (ipd / 2.0 / depth).atan();
        let angle = 2.0 * half;
        let back = features::vergence_depth(ipd, angle, DEFAULT_DEPTH_CAP);
        let one_tenth =
            features::vergence_depth(ipd, angle - 0.1f64.to_radians(), DEFAULT_DEPTH_CAP);
        println!(
            "depth {depth:>5.1} cm  vergence {:.3} deg  recovered {back:.6}  with -0.1 deg {one_tenth:.1}",
            angle.to_degrees()
        );
    }

    for (name, cfg) in [
        ("noiseless", SynthConfig::noiseless(1, 2000, 1)),
        (
            "noisy",
            SynthConfig {
                n_subjects: 1,
                frames_per_subject: 2000,
                seed: 1,
                ..SynthConfig::default()
            },
        ),
    ] {
        let rec = synth::generate(&cfg).expect("valid config").remove(0);
        let base = eval::geometric_baseline(&rec).expect("non-degenerate gaze");
        let truth: Vec<f64> = rec.samples.iter().filter_map(|s| s.gt_depth).collect();
        let bins = eval::binned_depth_error(&base, &truth, 50.0).expect("same lengths");
        println!(
            "{name}: MAE {:.4} cm",
            eval::mae(&base, &truth).expect("same lengths")
        );
        for b in bins {
            println!(
                "  [{:>3.0}, {:>3.0}) n={:<4} MAE {:.2}",
                b.lo, b.hi, b.n, b.mae_cm
            );
        }
    }
}
