//! Smooth L1 loss around its switch point and a few AdamW steps on a
//! quadratic bowl.
//!
//! Run with `cargo run --example adamw_smooth_l1`.

use focal_depth::nn::{self, AdamW, ModelConfig, ModelParams, OptimState};

fn main() {
    let beta = 0.75;
    for r in [0.0, 0.25, 0.75, 1.5, 3.0] {
        let l = nn::smooth_l1(&[r], &[0.0], beta);
        let g = nn::smooth_l1_grad(&[r], &[0.0], beta)[0];
        println!("residual {r:>4}  loss {l:.4}  grad {g:.4}");
    }

    // minimise 0.5 * |w - 3|^2 over every weight of a tiny model
    let cfg = ModelConfig {
        input_dim: 1,
        hidden_dim: 1,
        fc1_dim: 1,
        fc2_dim: 1,
        dropout_p: 0.0,
        sequence_len: 1,
    };
    let mut params = ModelParams::zeros(&cfg);
    let mut state = OptimState::new(&cfg, AdamW::new(0.1, 0.01));
    for step in 1..=200 {
        let mut grads = params.weights.clone();
        for s in grads.slices_mut() {
            s.iter_mut().for_each(|w| *w -= 3.0);
        }
        nn::adamw_step(&mut params.weights, &grads, &mut state);
        if step % 50 == 0 {
            println!("step {step:>3}  b_out {:.4}", params.weights.b_out[0]);
        }
    }
}
