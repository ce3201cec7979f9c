#![allow(dead_code)]

use focal_depth::nn::{self, ModelConfig, ModelParams, Weights};
use focal_depth::rng;
use ndarray::Array3;
use rand::Rng as _;

pub fn toy_grad_config() -> ModelConfig {
    ModelConfig {
        input_dim: 6,
        hidden_dim: 4,
        fc1_dim: 5,
        fc2_dim: 3,
        dropout_p: 0.245,
        sequence_len: 3,
    }
}

pub fn random_batch(cfg: &ModelConfig, b: usize, seed: u64) -> (Array3<f64>, Vec<f64>) {
    let mut r = rng::stream(seed, &[1]);
    let x = Array3::from_shape_fn((b, cfg.sequence_len, cfg.input_dim), |_| {
        r.random_range(-1.5..1.5)
    });
    let y = (0..b).map(|_| r.random_range(-2.0..2.0)).collect();
    (x, y)
}

fn loss_at(params: &ModelParams, x: &Array3<f64>, y: &[f64], beta: f64, dropout_seed: u64) -> f64 {
    let mut r = rng::stream(dropout_seed, &[]);
    let (pred, _) = nn::forward_train(params, x, &mut r).unwrap();
    nn::smooth_l1(&pred, y, beta)
}

/// Largest relative discrepancy between analytic and central-difference
/// gradients over every parameter, with `|a - n| / max(|a|, |n|)` and an
/// absolute comparison below `floor`.
pub fn max_grad_error(
    params: &ModelParams,
    x: &Array3<f64>,
    y: &[f64],
    beta: f64,
    h: f64,
    floor: f64,
) -> (f64, String) {
    let dropout_seed = 99;
    let mut r = rng::stream(dropout_seed, &[]);
    let (_, analytic, _) = nn::loss_and_grad(params, x, y, beta, &mut r).unwrap();
    let mut worst = (0.0, String::new());
    for (t, name) in nn::TENSOR_NAMES.iter().enumerate() {
        for k in 0..analytic.slices()[t].len() {
            let mut plus = params.clone();
            plus.weights.slices_mut()[t][k] += h;
            let mut minus = params.clone();
            minus.weights.slices_mut()[t][k] -= h;
            let num = (loss_at(&plus, x, y, beta, dropout_seed)
                - loss_at(&minus, x, y, beta, dropout_seed))
                / (2.0 * h);
            let a = analytic.slices()[t][k];
            let scale = a.abs().max(num.abs());
            let err = if scale < floor {
                (a - num).abs() / floor
            } else {
                (a - num).abs() / scale
            };
            if err > worst.0 {
                worst = (
                    err,
                    format!("{}[{k}]: analytic {a:e}, numeric {num:e}", name),
                );
            }
        }
    }
    worst
}

pub fn zero_grads(w: &Weights) -> bool {
    w.slices().iter().all(|s| s.iter().all(|&v| v == 0.0))
}
