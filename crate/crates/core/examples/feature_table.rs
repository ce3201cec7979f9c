//! Lists the engineered features and prints a few of them for one frame.
//!
//! Run with `cargo run --example feature_table`.

use focal_depth::features::{self, FeatureName};
use focal_depth::synth::{self, SynthConfig};

fn main() {
    for d in features::feature_table() {
        println!("{:>2} {:<32} {:?}  {}", d.index, d.name, d.group, d.formula);
    }

    let rec = synth::generate(&SynthConfig::noiseless(1, 100, 3))
        .expect("valid config")
        .remove(0);
    let frames = features::compute_feature_frames(&rec).expect("finite gaze");
    let f = &frames[50];
    println!(
        "frame {} at {:.2} cm:",
        f.frame_index,
        f.gt_depth.unwrap_or(f64::NAN)
    );
    for name in [
        FeatureName::VergenceDepth,
        FeatureName::VergenceDepthNormalized,
        FeatureName::VergenceDepthVelocity,
    ] {
        println!("  {:<28} {:.6}", name.name(), f.get(name));
    }
}
