mod common;

use common::*;
use focal_depth::nn::{self, ModelConfig, ModelParams};
use focal_depth::rng;
use ndarray::Array3;
use rand::Rng as _;

// Recorded from the first build of the toy network.
const GOLDEN_0: f64 = 0.017153324449483403;
const GOLDEN_1: f64 = 0.01570978068090339;

#[test]
fn finite_difference_agreement() {
    let cfg = toy_grad_config();
    for seed in 0..5 {
        let params = ModelParams::init(&cfg, seed);
        let (x, y) = random_batch(&cfg, 2, seed + 100);
        let (err, at) = max_grad_error(&params, &x, &y, 0.75, 1e-5, 1e-6);
        assert!(err < 1e-4, "seed {seed}: {err:e} at {at}");
    }
}

#[test]
fn zero_residual_gives_zero_gradients() {
    let cfg = toy_grad_config();
    let params = ModelParams::init(&cfg, 3);
    let (x, _) = random_batch(&cfg, 3, 4);
    let mut r = rng::stream(1, &[]);
    let (pred, cache) = nn::forward_train(&params, &x, &mut r).unwrap();
    let grads = nn::backward(&params, &cache, &nn::smooth_l1_grad(&pred, &pred, 0.75));
    assert!(zero_grads(&grads));
}

#[test]
fn gradients_are_linear_in_the_loss() {
    let cfg = toy_grad_config();
    let params = ModelParams::init(&cfg, 8);
    let (x, y) = random_batch(&cfg, 4, 5);
    let mut r = rng::stream(2, &[]);
    let (pred, cache) = nn::forward_train(&params, &x, &mut r).unwrap();
    let d = nn::smooth_l1_grad(&pred, &y, 0.75);
    let g1 = nn::backward(&params, &cache, &d);
    let scaled: Vec<f64> = d.iter().map(|v| v * 3.5).collect();
    let mut g3 = nn::backward(&params, &cache, &scaled);
    g3.scale(1.0 / 3.5);
    for (a, b) in g1.slices().iter().zip(g3.slices()) {
        for (u, v) in a.iter().zip(b) {
            assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
        }
    }
}

#[test]
fn maxpool_tie_routes_gradient_to_first_index() {
    let x =
        Array3::from_shape_vec((1, 4, 2), vec![0.5, 1.0, 2.0, 1.0, 2.0, 0.0, 1.0, 1.0]).unwrap();
    let (pooled, arg) = nn::maxpool_time(&x);
    assert_eq!(pooled.row(0).to_vec(), vec![2.0, 1.0]);
    let g = nn::maxpool_time_backward(&ndarray::array![[1.0, 1.0]], &arg, 4);
    assert_eq!(
        g.slice(ndarray::s![0, .., 0]).to_vec(),
        vec![0.0, 1.0, 0.0, 0.0]
    );
    assert_eq!(
        g.slice(ndarray::s![0, .., 1]).to_vec(),
        vec![1.0, 0.0, 0.0, 0.0]
    );
}

#[test]
fn maxpool_single_step_is_identity() {
    let x = Array3::from_shape_vec((2, 1, 3), vec![1.0, -2.0, 3.0, 4.0, 5.0, -6.0]).unwrap();
    let (pooled, _) = nn::maxpool_time(&x);
    assert_eq!(
        pooled.into_raw_vec_and_offset().0,
        vec![1.0, -2.0, 3.0, 4.0, 5.0, -6.0]
    );
}

#[test]
fn inference_is_deterministic_and_dropout_free() {
    let cfg = toy_grad_config();
    let mut params = ModelParams::init(&cfg, 11);
    params.running_mean.fill(0.1);
    params.running_var.fill(0.7);
    let (x, _) = random_batch(&cfg, 5, 6);
    let a = nn::predict(&params, &x).unwrap();
    let b = nn::predict(&params, &x).unwrap();
    assert_eq!(a, b);
    // a single sequence is fine at inference time
    let one = x.slice(ndarray::s![0..1, .., ..]).to_owned();
    assert_eq!(nn::predict(&params, &one).unwrap()[0], a[0]);
}

#[test]
fn zero_params_predict_zero() {
    let cfg = toy_grad_config();
    let params = ModelParams::zeros(&cfg);
    let (x, _) = random_batch(&cfg, 3, 7);
    assert!(nn::predict(&params, &x).unwrap().iter().all(|&p| p == 0.0));
}

#[test]
fn lstm_is_batch_independent() {
    let cfg = toy_grad_config();
    let params = ModelParams::init(&cfg, 12);
    let (x, _) = random_batch(&cfg, 3, 8);
    let out = nn::lstm_forward(&params.weights, &x).unwrap();
    let perm = [2, 0, 1];
    let xp = x.select(ndarray::Axis(0), &perm);
    let outp = nn::lstm_forward(&params.weights, &xp).unwrap();
    for (k, &p) in perm.iter().enumerate() {
        assert_eq!(
            outp.slice(ndarray::s![k, .., ..]),
            out.slice(ndarray::s![p, .., ..])
        );
    }
}

#[test]
fn shape_mismatch_is_reported() {
    let cfg = toy_grad_config();
    let params = ModelParams::init(&cfg, 1);
    let bad = Array3::<f64>::zeros((2, 3, cfg.input_dim + 1));
    assert!(matches!(
        nn::predict(&params, &bad),
        Err(nn::NnError::ShapeMismatch { .. })
    ));
}

#[test]
fn smooth_l1_limits() {
    let residuals = [-3.0, -0.2, 0.0, 0.4, 2.5];
    let zeros = [0.0; 5];
    let mae = residuals.iter().map(|r: &f64| r.abs()).sum::<f64>() / 5.0;
    assert!((nn::smooth_l1(&residuals, &zeros, 1e-6) - mae).abs() < 1e-6);
    for g in nn::smooth_l1_grad(&residuals, &zeros, 0.75) {
        assert!(g.abs() * 5.0 <= 1.0);
    }
    let beta = 0.75;
    let h = 1e-7;
    let left =
        (nn::smooth_l1(&[beta], &[0.0], beta) - nn::smooth_l1(&[beta - h], &[0.0], beta)) / h;
    let right =
        (nn::smooth_l1(&[beta + h], &[0.0], beta) - nn::smooth_l1(&[beta], &[0.0], beta)) / h;
    assert!((left - 1.0).abs() < 1e-6 && (right - 1.0).abs() < 1e-6);
}

#[test]
fn adamw_runs_are_reproducible() {
    let cfg = toy_grad_config();
    let run = || {
        let mut params = ModelParams::init(&cfg, 21);
        let mut opt = nn::OptimState::new(&cfg, nn::AdamW::new(0.01, 0.05));
        for step in 0..5 {
            let (x, y) = random_batch(&cfg, 4, 300 + step);
            let mut r = rng::stream(step, &[]);
            let (_, g, stats) = nn::loss_and_grad(&params, &x, &y, 0.75, &mut r).unwrap();
            nn::adamw_step(&mut params.weights, &g, &mut opt);
            stats.update_running(&mut params.running_mean, &mut params.running_var);
        }
        params
    };
    assert_eq!(run(), run());
}

#[test]
fn toy_network_golden_output() {
    let cfg = ModelConfig::toy();
    let params = ModelParams::init(&cfg, 42);
    let mut r = rng::stream(42, &[9]);
    let x = Array3::from_shape_fn((2, cfg.sequence_len, cfg.input_dim), |_| {
        r.random_range(-1.0..1.0)
    });
    let y = nn::predict(&params, &x).unwrap();
    let golden = [GOLDEN_0, GOLDEN_1];
    for (p, g) in y.iter().zip(golden) {
        assert!((p - g).abs() < 1e-12, "{p:e} vs {g:e}");
    }
}
