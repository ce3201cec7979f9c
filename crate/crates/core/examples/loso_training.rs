//! Leave-one-subject-out training of a small network on synthetic data.
//!
//! Run with `cargo run --release --example loso_training`.

use focal_depth::features::FEATURE_COUNT;
use focal_depth::nn::ModelConfig;
use focal_depth::synth::{self, SynthConfig};
use focal_depth::train::{self, Preset, TrainConfig};

fn main() {
    let recs = synth::generate(&SynthConfig {
        n_subjects: 4,
        frames_per_subject: 1500,
        ..SynthConfig::default()
    })
    .expect("valid config");
    let cfg = TrainConfig {
        preset: Preset::Custom,
        model: ModelConfig {
            input_dim: FEATURE_COUNT,
            hidden_dim: 16,
            fc1_dim: 24,
            fc2_dim: 12,
            dropout_p: 0.1,
            sequence_len: 10,
        },
        epochs: 15,
        ..TrainConfig::toy()
    };
    let out = train::run_loocv(&recs, &cfg, None, 1).expect("training");
    for f in &out.folds {
        println!(
            "fold {} test {}: MAE {:.2} cm (vergence baseline {:.2}), loss {:.3} -> {:.3}",
            f.fold,
            f.test_subject,
            f.mae_cm,
            f.baseline_mae_cm,
            f.train_loss.first().unwrap_or(&f64::NAN),
            f.train_loss.last().unwrap_or(&f64::NAN)
        );
    }
    println!(
        "mean MAE {:.2} cm over {} folds",
        out.aggregate.mean_mae_cm,
        out.folds.len()
    );
}
