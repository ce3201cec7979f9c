//! Fits the preprocessing pipeline on two subjects and replays it on a
//! held-out third.
//!
//! Run with `cargo run --example preprocess_pipeline`.

use focal_depth::features::feature_names;
use focal_depth::preprocess::{self, PipelineConfig, Transform};
use focal_depth::synth::{self, SynthConfig};
use focal_depth::train;

fn main() {
    let cfg = PipelineConfig::default();
    let recs = synth::generate(&SynthConfig {
        n_subjects: 3,
        frames_per_subject: 1500,
        ..SynthConfig::default()
    })
    .expect("valid config");
    let data = train::prepare(&recs, &cfg).expect("features and cleaning");
    for (id, (frames, rec)) in data.subject_ids.iter().zip(data.frames.iter().zip(&recs)) {
        println!(
            "{id}: {} of {} frames survive cleaning",
            frames.len(),
            rec.len()
        );
    }

    let (manifest, train_batch) =
        preprocess::fit_pipeline(&data.frames[..2], &cfg, 42).expect("fit");
    println!(
        "training sequences: {} x {} x {}",
        train_batch.len(),
        train_batch.sequence_len(),
        feature_names().len()
    );
    println!(
        "target scaler: [{:.1}, {:.1}] cm -> [{}, {}]",
        manifest.target_scaler.y_min,
        manifest.target_scaler.y_max,
        manifest.target_scaler.a,
        manifest.target_scaler.b
    );
    let mut tally = [0usize; 4];
    for t in &manifest.transforms.per_feature {
        tally[match t.transform {
            Transform::Identity => 0,
            Transform::Log => 1,
            Transform::Sqrt => 2,
            Transform::BoxCox { .. } => 3,
        }] += 1;
    }
    println!(
        "transforms: identity {} log {} sqrt {} box-cox {}",
        tally[0], tally[1], tally[2], tally[3]
    );

    let held_out = manifest.apply(&data.frames[2..]).expect("replay");
    println!("held-out sequences: {}", held_out.len());
    println!("manifest sha256: {}", manifest.hash());
}
