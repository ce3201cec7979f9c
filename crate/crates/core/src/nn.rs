//! The depth regression network and its training primitives.
//!
//! Layer order: LSTM over the window, batch normalization per hidden
//! channel, max-pool over time, dropout, then `dense -> ELU -> dense -> ELU
//! -> dense(1)`. Gradients are derived by hand, including backpropagation
//! through time, and verified against central finite differences in the
//! test suite.
//!
//! Tensors are `f64` ndarray arrays. Batches are `[B, L, I]`.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FEATURE_COUNT;
use crate::rng::{self, tag, Rng};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("batch normalization in train mode needs at least 2 values per channel, got {0}")]
    InsufficientBatch(usize),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub fc1_dim: usize,
    pub fc2_dim: usize,
    pub dropout_p: f64,
    pub sequence_len: usize,
}

impl ModelConfig {
    /// Full-size network.
    pub fn paper() -> Self {
        Self {
            input_dim: FEATURE_COUNT,
            hidden_dim: 1435,
            fc1_dim: 1763,
            fc2_dim: 440,
            dropout_p: 0.245,
            sequence_len: 10,
        }
    }

    /// Desk-scale network.
    pub fn toy() -> Self {
        Self {
            hidden_dim: 64,
            fc1_dim: 96,
            fc2_dim: 48,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let dims = [
            self.input_dim,
            self.hidden_dim,
            self.fc1_dim,
            self.fc2_dim,
            self.sequence_len,
        ];
        if dims.contains(&0) {
            return Err(NnError::InvalidConfig(
                "all dimensions must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(NnError::InvalidConfig(format!(
                "dropout_p {} outside [0, 1)",
                self.dropout_p
            )));
        }
        Ok(())
    }
}

/// Every trainable tensor. The same layout holds gradients and optimizer
/// moments. LSTM gate blocks are stacked in the order input, forget, cell,
/// output.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    /// `[4H, I]`
    pub w_ih: Array2<f64>,
    /// `[4H, H]`
    pub w_hh: Array2<f64>,
    /// `[4H]`
    pub b_lstm: Array1<f64>,
    pub bn_gamma: Array1<f64>,
    pub bn_beta: Array1<f64>,
    /// `[fc1, H]`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `[fc2, fc1]`
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    /// `[1, fc2]`
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

pub const TENSOR_NAMES: [&str; 11] = [
    "w_ih", "w_hh", "b_lstm", "bn_gamma", "bn_beta", "w1", "b1", "w2", "b2", "w_out", "b_out",
];

impl Weights {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (i, h, f1, f2) = (cfg.input_dim, cfg.hidden_dim, cfg.fc1_dim, cfg.fc2_dim);
        Self {
            w_ih: Array2::zeros((4 * h, i)),
            w_hh: Array2::zeros((4 * h, h)),
            b_lstm: Array1::zeros(4 * h),
            bn_gamma: Array1::zeros(h),
            bn_beta: Array1::zeros(h),
            w1: Array2::zeros((f1, h)),
            b1: Array1::zeros(f1),
            w2: Array2::zeros((f2, f1)),
            b2: Array1::zeros(f2),
            w_out: Array2::zeros((1, f2)),
            b_out: Array1::zeros(1),
        }
    }

    /// Shapes in [`TENSOR_NAMES`] order.
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        vec![
            self.w_ih.shape().to_vec(),
            self.w_hh.shape().to_vec(),
            self.b_lstm.shape().to_vec(),
            self.bn_gamma.shape().to_vec(),
            self.bn_beta.shape().to_vec(),
            self.w1.shape().to_vec(),
            self.b1.shape().to_vec(),
            self.w2.shape().to_vec(),
            self.b2.shape().to_vec(),
            self.w_out.shape().to_vec(),
            self.b_out.shape().to_vec(),
        ]
    }

    /// Flat views in [`TENSOR_NAMES`] order.
    pub fn slices(&self) -> [&[f64]; 11] {
        fn f(s: Option<&[f64]>) -> &[f64] {
            s.expect("weights are contiguous")
        }
        [
            f(self.w_ih.as_slice()),
            f(self.w_hh.as_slice()),
            f(self.b_lstm.as_slice()),
            f(self.bn_gamma.as_slice()),
            f(self.bn_beta.as_slice()),
            f(self.w1.as_slice()),
            f(self.b1.as_slice()),
            f(self.w2.as_slice()),
            f(self.b2.as_slice()),
            f(self.w_out.as_slice()),
            f(self.b_out.as_slice()),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 11] {
        fn f(s: Option<&mut [f64]>) -> &mut [f64] {
            s.expect("weights are contiguous")
        }
        [
            f(self.w_ih.as_slice_mut()),
            f(self.w_hh.as_slice_mut()),
            f(self.b_lstm.as_slice_mut()),
            f(self.bn_gamma.as_slice_mut()),
            f(self.bn_beta.as_slice_mut()),
            f(self.w1.as_slice_mut()),
            f(self.b1.as_slice_mut()),
            f(self.w2.as_slice_mut()),
            f(self.b2.as_slice_mut()),
            f(self.w_out.as_slice_mut()),
            f(self.b_out.as_slice_mut()),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|x| x.is_finite()))
    }

    pub fn scale(&mut self, c: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x *= c);
        }
    }
}

/// Weights plus the batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: Weights,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl ModelParams {
    /// All-zero weights, unit running variance.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            config: *cfg,
            weights: Weights::zeros(cfg),
            running_mean: Array1::zeros(cfg.hidden_dim),
            running_var: Array1::ones(cfg.hidden_dim),
        }
    }

    /// Uniform `±1/sqrt(fan_in)` weights, zero biases except a forget-gate
    /// bias of 1, unit batch-norm gain.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut p = Self::zeros(cfg);
        let mut rng = rng::stream(seed, &[tag::INIT]);
        let h = cfg.hidden_dim;
        let fill = |a: &mut [f64], fan_in: usize, rng: &mut Rng| {
            let k = 1.0 / (fan_in as f64).sqrt();
            a.iter_mut().for_each(|x| *x = rng.random_range(-k..k));
        };
        let w = &mut p.weights;
        fill(w.w_ih.as_slice_mut().unwrap(), cfg.input_dim, &mut rng);
        fill(w.w_hh.as_slice_mut().unwrap(), h, &mut rng);
        fill(w.w1.as_slice_mut().unwrap(), h, &mut rng);
        fill(w.w2.as_slice_mut().unwrap(), cfg.fc1_dim, &mut rng);
        fill(w.w_out.as_slice_mut().unwrap(), cfg.fc2_dim, &mut rng);
        w.b_lstm.slice_mut(s![h..2 * h]).fill(1.0);
        w.bn_gamma.fill(1.0);
        p
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

fn check_input(cfg: &ModelConfig, x: &Array3<f64>) -> Result<(), NnError> {
    let sh = x.shape();
    if sh[0] == 0 || sh[1] == 0 || sh[2] != cfg.input_dim {
        return Err(NnError::ShapeMismatch {
            expected: format!("[B>=1, L>=1, {}]", cfg.input_dim),
            got: format!("{sh:?}"),
        });
    }
    Ok(())
}

struct LstmCache {
    /// per step `[B, 4H]` post-activation gates (i, f, g, o)
    gates: Vec<Array2<f64>>,
    /// per step cell state, index 0 is the zero initial state
    cells: Vec<Array2<f64>>,
    /// per step hidden state, index 0 is the zero initial state
    hiddens: Vec<Array2<f64>>,
    tanh_c: Vec<Array2<f64>>,
}

fn lstm_run(w: &Weights, x: &Array3<f64>) -> (Array3<f64>, LstmCache) {
    let (b, l, _) = x.dim();
    let h = w.w_hh.shape()[1];
    let mut out = Array3::zeros((b, l, h));
    let mut cache = LstmCache {
        gates: Vec::with_capacity(l),
        cells: vec![Array2::zeros((b, h))],
        hiddens: vec![Array2::zeros((b, h))],
        tanh_c: Vec::with_capacity(l),
    };
    for t in 0..l {
        let xt = x.slice(s![.., t, ..]);
        let mut z = xt.dot(&w.w_ih.t()) + cache.hiddens[t].dot(&w.w_hh.t());
        z += &w.b_lstm;
        for mut row in z.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = if (2 * h..3 * h).contains(&k) {
                    v.tanh()
                } else {
                    sigmoid(*v)
                };
            }
        }
        let c_prev = &cache.cells[t];
        let mut c = Array2::zeros((b, h));
        Zip::from(&mut c)
            .and(c_prev)
            .and(z.slice(s![.., 0..h]))
            .and(z.slice(s![.., h..2 * h]))
            .and(z.slice(s![.., 2 * h..3 * h]))
            .for_each(|c, &cp, &i, &f, &g| *c = f * cp + i * g);
        let tc = c.mapv(f64::tanh);
        let hidden = &z.slice(s![.., 3 * h..4 * h]) * &tc;
        out.slice_mut(s![.., t, ..]).assign(&hidden);
        cache.gates.push(z);
        cache.cells.push(c);
        cache.hiddens.push(hidden);
        cache.tanh_c.push(tc);
    }
    (out, cache)
}

/// LSTM over every timestep from zero initial state; returns `[B, L, H]`.
pub fn lstm_forward(weights: &Weights, x: &Array3<f64>) -> Result<Array3<f64>, NnError> {
    let i = weights.w_ih.shape()[1];
    if x.shape()[2] != i {
        return Err(NnError::ShapeMismatch {
            expected: format!("[B, L, {i}]"),
            got: format!("{:?}", x.shape()),
        });
    }
    Ok(lstm_run(weights, x).0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Batch statistics of one training pass: per-channel mean and unbiased
/// variance over batch and time.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Array1<f64>,
    pub var_unbiased: Array1<f64>,
}

impl BatchStats {
    /// Folds the statistics into running averages with momentum 0.1.
    pub fn update_running(&self, running_mean: &mut Array1<f64>, running_var: &mut Array1<f64>) {
        running_mean.zip_mut_with(&self.mean, |r, &m| {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m
        });
        running_var.zip_mut_with(&self.var_unbiased, |r, &v| {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v
        });
    }
}

struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn flat(x: &Array3<f64>) -> ArrayView2<'_, f64> {
    let (b, l, h) = x.dim();
    x.view()
        .into_shape_with_order((b * l, h))
        .expect("contiguous")
}

fn bn_train(
    x: &Array3<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
) -> Result<(Array3<f64>, BnCache, BatchStats), NnError> {
    let (b, l, h) = x.dim();
    let n = b * l;
    if n < 2 {
        return Err(NnError::InsufficientBatch(n));
    }
    let xf = flat(x);
    let mean = xf.mean_axis(Axis(0)).expect("non-empty");
    let centered = &xf - &mean;
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n as f64;
    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    let xhat = &centered * &inv_std;
    let y = &xhat * gamma + beta;
    let stats = BatchStats {
        mean,
        var_unbiased: &var * (n as f64 / (n - 1) as f64),
    };
    Ok((
        y.into_shape_with_order((b, l, h)).expect("contiguous"),
        BnCache { xhat, inv_std },
        stats,
    ))
}

/// Batch normalization per hidden channel over batch and time. Train mode
/// normalizes with batch statistics and folds them into the running
/// estimates; infer mode uses the running estimates.
pub fn batchnorm(
    x: &Array3<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
    running_mean: &mut Array1<f64>,
    running_var: &mut Array1<f64>,
    mode: Mode,
) -> Result<Array3<f64>, NnError> {
    match mode {
        Mode::Train => {
            let (y, _, stats) = bn_train(x, gamma, beta)?;
            stats.update_running(running_mean, running_var);
            Ok(y)
        }
        Mode::Infer => Ok(bn_infer(x, gamma, beta, running_mean, running_var)),
    }
}

fn bn_infer(
    x: &Array3<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
    mean: &Array1<f64>,
    var: &Array1<f64>,
) -> Array3<f64> {
    let scale = gamma / &var.mapv(|v| (v + BN_EPS).sqrt());
    let shift = beta - &(mean * &scale);
    x * &scale + &shift
}

/// Per-channel maximum over time with the (first) argmax position.
pub fn maxpool_time(x: &Array3<f64>) -> (Array2<f64>, Array2<usize>) {
    let (b, l, h) = x.dim();
    let mut out = Array2::zeros((b, h));
    let mut arg = Array2::zeros((b, h));
    for bi in 0..b {
        for c in 0..h {
            let (mut best, mut at) = (x[[bi, 0, c]], 0);
            for t in 1..l {
                if x[[bi, t, c]] > best {
                    best = x[[bi, t, c]];
                    at = t;
                }
            }
            out[[bi, c]] = best;
            arg[[bi, c]] = at;
        }
    }
    (out, arg)
}

/// Routes pooled gradients back to the argmax timesteps.
pub fn maxpool_time_backward(
    grad: &Array2<f64>,
    arg: &Array2<usize>,
    sequence_len: usize,
) -> Array3<f64> {
    let (b, h) = grad.dim();
    let mut out = Array3::zeros((b, sequence_len, h));
    for ((bi, c), &g) in grad.indexed_iter() {
        out[[bi, arg[[bi, c]], c]] += g;
    }
    out
}

fn dense(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(&w.t()) + b
}

/// Pre-activations and activations of both hidden layers, then the output.
type HeadOutputs = (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>, Vec<f64>);

fn head(w: &Weights, pooled: &Array2<f64>) -> HeadOutputs {
    let a1 = dense(pooled, &w.w1, &w.b1);
    let e1 = a1.mapv(elu);
    let a2 = dense(&e1, &w.w2, &w.b2);
    let e2 = a2.mapv(elu);
    let y = dense(&e2, &w.w_out, &w.b_out);
    (a1, e1, a2, e2, y.column(0).to_vec())
}

/// Inference pass: running batch-norm statistics, no dropout.
pub fn predict(params: &ModelParams, x: &Array3<f64>) -> Result<Vec<f64>, NnError> {
    check_input(&params.config, x)?;
    let w = &params.weights;
    let (hs, _) = lstm_run(w, x);
    let bn = bn_infer(
        &hs,
        &w.bn_gamma,
        &w.bn_beta,
        &params.running_mean,
        &params.running_var,
    );
    let (pooled, _) = maxpool_time(&bn);
    Ok(head(w, &pooled).4)
}

/// Everything the backward pass needs from one training forward pass.
pub struct TrainCache {
    x: Array3<f64>,
    lstm: LstmCache,
    bn: BnCache,
    argmax: Array2<usize>,
    mask: Array2<f64>,
    dropped: Array2<f64>,
    a1: Array2<f64>,
    e1: Array2<f64>,
    a2: Array2<f64>,
    e2: Array2<f64>,
    pub batch_stats: BatchStats,
}

/// Training pass with batch statistics and inverted dropout drawn from
/// `rng`. Running statistics are left untouched; apply
/// [`TrainCache::batch_stats`] after the step.
pub fn forward_train(
    params: &ModelParams,
    x: &Array3<f64>,
    rng: &mut Rng,
) -> Result<(Vec<f64>, TrainCache), NnError> {
    let cfg = &params.config;
    check_input(cfg, x)?;
    let w = &params.weights;
    let (hs, lstm) = lstm_run(w, x);
    let (bn_out, bn, batch_stats) = bn_train(&hs, &w.bn_gamma, &w.bn_beta)?;
    let (pooled, argmax) = maxpool_time(&bn_out);
    let keep = 1.0 - cfg.dropout_p;
    let mask = pooled.mapv(|_| {
        if cfg.dropout_p == 0.0 || rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    });
    let dropped = &pooled * &mask;
    let (a1, e1, a2, e2, y) = head(w, &dropped);
    Ok((
        y,
        TrainCache {
            x: x.clone(),
            lstm,
            bn,
            argmax,
            mask,
            dropped,
            a1,
            e1,
            a2,
            e2,
            batch_stats,
        },
    ))
}

fn outer_acc(grad: &mut Array2<f64>, d: &Array2<f64>, input: &ArrayView2<'_, f64>) {
    grad.scaled_add(1.0, &d.t().dot(input));
}

/// Gradients of a scalar loss given its derivative with respect to each
/// prediction.
pub fn backward(params: &ModelParams, cache: &TrainCache, d_pred: &[f64]) -> Weights {
    let w = &params.weights;
    let cfg = &params.config;
    let h = cfg.hidden_dim;
    let (b, l, _) = cache.x.dim();
    let mut g = Weights::zeros(cfg);

    let dy = Array2::from_shape_vec((b, 1), d_pred.to_vec()).expect("one gradient per prediction");
    outer_acc(&mut g.w_out, &dy, &cache.e2.view());
    g.b_out += &dy.sum_axis(Axis(0));
    let de2 = dy.dot(&w.w_out);

    let da2 = &de2 * &cache.a2.mapv(elu_grad);
    outer_acc(&mut g.w2, &da2, &cache.e1.view());
    g.b2 += &da2.sum_axis(Axis(0));
    let de1 = da2.dot(&w.w2);

    let da1 = &de1 * &cache.a1.mapv(elu_grad);
    outer_acc(&mut g.w1, &da1, &cache.dropped.view());
    g.b1 += &da1.sum_axis(Axis(0));
    let dpooled = da1.dot(&w.w1) * &cache.mask;

    let dbn = maxpool_time_backward(&dpooled, &cache.argmax, l);
    let dbn_f = flat(&dbn);
    let n = (b * l) as f64;
    g.bn_gamma = (&dbn_f * &cache.bn.xhat).sum_axis(Axis(0));
    g.bn_beta = dbn_f.sum_axis(Axis(0));
    let dxhat = &dbn_f * &w.bn_gamma;
    let sum_dxhat = dxhat.sum_axis(Axis(0));
    let sum_dxhat_xhat = (&dxhat * &cache.bn.xhat).sum_axis(Axis(0));
    let dhs_flat =
        (&dxhat * n - &sum_dxhat - &(&cache.bn.xhat * &sum_dxhat_xhat)) * &(&cache.bn.inv_std / n);
    let dhs = dhs_flat
        .into_shape_with_order((b, l, h))
        .expect("contiguous");

    let lc = &cache.lstm;
    let mut dh_next = Array2::<f64>::zeros((b, h));
    let mut dc_next = Array2::<f64>::zeros((b, h));
    let mut dz = Array2::<f64>::zeros((b, 4 * h));
    for t in (0..l).rev() {
        let gates = &lc.gates[t];
        let tc = &lc.tanh_c[t];
        let c_prev = &lc.cells[t];
        let dh = &dhs.slice(s![.., t, ..]) + &dh_next;
        for bi in 0..b {
            for k in 0..h {
                let (i, f, gg, o) = (
                    gates[[bi, k]],
                    gates[[bi, h + k]],
                    gates[[bi, 2 * h + k]],
                    gates[[bi, 3 * h + k]],
                );
                let dhv = dh[[bi, k]];
                let t_c = tc[[bi, k]];
                let dc = dhv * o * (1.0 - t_c * t_c) + dc_next[[bi, k]];
                dz[[bi, k]] = dc * gg * i * (1.0 - i);
                dz[[bi, h + k]] = dc * c_prev[[bi, k]] * f * (1.0 - f);
                dz[[bi, 2 * h + k]] = dc * i * (1.0 - gg * gg);
                dz[[bi, 3 * h + k]] = dhv * t_c * o * (1.0 - o);
                dc_next[[bi, k]] = dc * f;
            }
        }
        outer_acc(&mut g.w_ih, &dz, &cache.x.slice(s![.., t, ..]));
        outer_acc(&mut g.w_hh, &dz, &lc.hiddens[t].view());
        g.b_lstm += &dz.sum_axis(Axis(0));
        dh_next = dz.dot(&w.w_hh);
    }
    g
}

/// Mean smooth-L1 loss: `0.5 d^2 / beta` below `beta`, `|d| - 0.5 beta` above.
pub fn smooth_l1(pred: &[f64], target: &[f64], beta: f64) -> f64 {
    assert_eq!(
        pred.len(),
        target.len(),
        "prediction/target length mismatch"
    );
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = (p - t).abs();
            if d < beta {
                0.5 * d * d / beta
            } else {
                d - 0.5 * beta
            }
        })
        .sum();
    total / pred.len() as f64
}

/// Derivative of [`smooth_l1`] with respect to each prediction.
pub fn smooth_l1_grad(pred: &[f64], target: &[f64], beta: f64) -> Vec<f64> {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target)
        .map(|(p, t)| ((p - t) / beta).clamp(-1.0, 1.0) / n)
        .collect()
}

/// Loss, gradients and batch statistics of one training step.
pub fn loss_and_grad(
    params: &ModelParams,
    x: &Array3<f64>,
    targets: &[f64],
    beta: f64,
    rng: &mut Rng,
) -> Result<(f64, Weights, BatchStats), NnError> {
    let (pred, cache) = forward_train(params, x, rng)?;
    if targets.len() != pred.len() {
        return Err(NnError::ShapeMismatch {
            expected: format!("{} targets", pred.len()),
            got: targets.len().to_string(),
        });
    }
    let loss = smooth_l1(&pred, targets, beta);
    let grads = backward(params, &cache, &smooth_l1_grad(&pred, targets, beta));
    Ok((loss, grads, cache.batch_stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub hyper: AdamW,
    pub m: Weights,
    pub v: Weights,
    pub step: u64,
}

impl OptimState {
    pub fn new(cfg: &ModelConfig, hyper: AdamW) -> Self {
        Self {
            hyper,
            m: Weights::zeros(cfg),
            v: Weights::zeros(cfg),
            step: 0,
        }
    }
}

/// One AdamW update: decoupled decay `p -= lr wd p`, then the
/// bias-corrected Adam step.
pub fn adamw_step(params: &mut Weights, grads: &Weights, state: &mut OptimState) {
    state.step += 1;
    let AdamW {
        lr,
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.hyper;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    let decay = 1.0 - lr * weight_decay;
    for (((p, g), m), v) in params
        .slices_mut()
        .into_iter()
        .zip(grads.slices())
        .zip(state.m.slices_mut())
        .zip(state.v.slices_mut())
    {
        for k in 0..p.len() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] = p[k] * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    config: ModelConfig,
    manifest_hash: String,
    tensors: Vec<(String, Vec<usize>)>,
}

const CHECKPOINT_FORMAT: &str = "focal-depth-f64le-v1";

/// Writes `u64 LE header length`, a JSON header, then every tensor (and the
/// running statistics) as little-endian `f64`.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &ModelParams,
    manifest_hash: &str,
) -> Result<(), NnError> {
    let mut tensors: Vec<(String, Vec<usize>)> = TENSOR_NAMES
        .iter()
        .map(|n| n.to_string())
        .zip(params.weights.shapes())
        .collect();
    tensors.push(("running_mean".into(), vec![params.config.hidden_dim]));
    tensors.push(("running_var".into(), vec![params.config.hidden_dim]));
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        config: params.config,
        manifest_hash: manifest_hash.into(),
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(
        8 + json.len() + 8 * (params.weights.param_count() + 2 * params.config.hidden_dim),
    );
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    let extra = [
        params.running_mean.as_slice().unwrap(),
        params.running_var.as_slice().unwrap(),
    ];
    for s in params.weights.slices().into_iter().chain(extra) {
        for x in s {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

/// Reads a checkpoint; returns the parameters and the stored manifest hash.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, String), NnError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| NnError::Checkpoint(m.to_string());
    if bytes.len() < 8 {
        return Err(bad("truncated header length"));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let body_start = 8usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[8..body_start])
        .map_err(|e| NnError::Checkpoint(e.to_string()))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(bad("unknown format"));
    }
    header.config.validate()?;
    let mut params = ModelParams::zeros(&header.config);
    let mut expected = params.weights.shapes();
    expected.push(vec![header.config.hidden_dim]);
    expected.push(vec![header.config.hidden_dim]);
    let stored: Vec<Vec<usize>> = header.tensors.iter().map(|(_, s)| s.clone()).collect();
    if stored != expected {
        return Err(bad("tensor shapes disagree with config"));
    }
    let data = &bytes[body_start..];
    let total: usize = expected.iter().map(|s| s.iter().product::<usize>()).sum();
    if data.len() != 8 * total {
        return Err(bad("payload size mismatch"));
    }
    let mut values = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let ModelParams {
        weights,
        running_mean,
        running_var,
        ..
    } = &mut params;
    let extra = [
        running_mean.as_slice_mut().unwrap(),
        running_var.as_slice_mut().unwrap(),
    ];
    for s in weights.slices_mut().into_iter().chain(extra) {
        for x in s.iter_mut() {
            *x = values.next().expect("sized above");
        }
    }
    Ok((params, header.manifest_hash))
}
