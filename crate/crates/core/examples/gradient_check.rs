//! Compares backpropagated gradients with central differences on a tiny
//! network.
//!
//! Run with `cargo run --example gradient_check`.

use focal_depth::nn::{self, ModelConfig, ModelParams, TENSOR_NAMES};
use focal_depth::rng;
use ndarray::Array3;
use rand::Rng as _;

fn loss(params: &ModelParams, x: &Array3<f64>, y: &[f64]) -> f64 {
    let (pred, _) = nn::forward_train(params, x, &mut rng::stream(7, &[])).expect("shapes");
    nn::smooth_l1(&pred, y, 0.75)
}

fn main() {
    let cfg = ModelConfig {
        input_dim: 5,
        hidden_dim: 4,
        fc1_dim: 6,
        fc2_dim: 3,
        dropout_p: 0.2,
        sequence_len: 4,
    };
    let params = ModelParams::init(&cfg, 1);
    let mut r = rng::stream(2, &[]);
    let x = Array3::from_shape_fn((3, cfg.sequence_len, cfg.input_dim), |_| {
        r.random_range(-1.0..1.0)
    });
    let y: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();

    let (_, grads, _) =
        nn::loss_and_grad(&params, &x, &y, 0.75, &mut rng::stream(7, &[])).expect("shapes");
    let h = 1e-6;
    for (t, name) in TENSOR_NAMES.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for k in 0..grads.slices()[t].len() {
            let mut plus = params.clone();
            plus.weights.slices_mut()[t][k] += h;
            let mut minus = params.clone();
            minus.weights.slices_mut()[t][k] -= h;
            let numeric = (loss(&plus, &x, &y) - loss(&minus, &x, &y)) / (2.0 * h);
            let analytic = grads.slices()[t][k];
            let scale = analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / scale);
        }
        println!(
            "{name:<8} {:>4} params  max rel err {worst:.2e}",
            grads.slices()[t].len()
        );
    }
}
