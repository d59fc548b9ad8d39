//! Shared helpers for the gradient-check suites: random small network
//! instances and the analytic-vs-central-difference comparison.

// Each integration-test target compiles its own copy of this module and
// uses a different subset of it.
#![allow(dead_code)]

use mdistill::netgraph::{backward, forward, ModelParams, NetworkSpec};
use mdistill::numcore::{finite_diff_grad, max_rel_error, Matrix, RngStream};

pub fn random_matrix(rng: &mut RngStream, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.uniform(-scale, scale)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Tiny FSMN spec with randomized orders/strides (dims <= 8).
pub fn small_fsmn_spec(rng: &mut RngStream) -> NetworkSpec {
    NetworkSpec {
        input_dim: rng.uniform_usize(2, 4),
        hidden_dim: rng.uniform_usize(3, 6),
        output_dim: rng.uniform_usize(3, 5),
        fsmn_blocks: rng.uniform_usize(1, 2),
        lookback_order: rng.uniform_usize(1, 3),
        lookahead_order: rng.uniform_usize(0, 2),
        stride_back: rng.uniform_usize(1, 2),
        stride_ahead: rng.uniform_usize(1, 2),
        ..NetworkSpec::fsmn(3, 4)
    }
}

pub fn small_lstm_spec(rng: &mut RngStream) -> NetworkSpec {
    NetworkSpec {
        input_dim: rng.uniform_usize(2, 4),
        hidden_dim: rng.uniform_usize(2, 4),
        output_dim: rng.uniform_usize(3, 5),
        lstm_layers: rng.uniform_usize(1, 2),
        lstm_proj_dim: rng.uniform_usize(2, 3),
        ..NetworkSpec::lstm(3, 4)
    }
}

/// Fully randomized parameters (weights, biases, memory taps).
///
/// Gradient checks must not start from `init_params`: its zero biases and
/// zero memory taps leave ReLU pre-activations sitting exactly on the kink,
/// where central differences are meaningless, and zero taps would leave the
/// tap-to-hidden gradient path unexercised.
pub fn random_params(spec: &NetworkSpec, rng: &mut RngStream) -> ModelParams {
    let mut params = ModelParams::zeros(spec);
    for entry in params.entries_mut() {
        for v in entry.value.data_mut() {
            *v = rng.uniform(-0.6, 0.6);
        }
    }
    params
}

/// Checks `backward` against central differences of
/// `sum_{t,l} dlogits[t,l] * logits[t,l]` for one random instance.
/// Returns the worst guarded relative error over all parameters.
pub fn network_gradient_error(spec: &NetworkSpec, seed: u64) -> f64 {
    let mut rng = RngStream::new(seed, 100);
    let frames = rng.uniform_usize(1, 6);
    let features = random_matrix(&mut rng, frames, spec.input_dim, 1.0);
    let dlogits = random_matrix(&mut rng, frames, spec.output_dim, 1.0);
    let params = random_params(spec, &mut RngStream::new(seed, 101));

    let (_, cache) = forward(&params, spec, &features).unwrap();
    let analytic = backward(&params, spec, &cache, &dlogits).unwrap().flatten();

    let template = params.clone();
    let loss = |flat: &[f64]| -> f64 {
        let mut p = template.clone();
        p.set_flat(flat);
        let (logits, _) = forward(&p, spec, &features).unwrap();
        logits
            .data()
            .iter()
            .zip(dlogits.data())
            .map(|(&l, &d)| l * d)
            .sum()
    };
    let numeric = finite_diff_grad(loss, &params.flatten(), 1e-5);
    max_rel_error(&analytic, &numeric)
}

/// Convenience wrapper asserting the spec-level tolerance.
pub fn assert_network_gradients(spec: &NetworkSpec, seed: u64) {
    let err = network_gradient_error(spec, seed);
    assert!(
        err < 1e-6,
        "gradient mismatch (rel err {err:.3e}) for seed {seed}, spec {spec:?}"
    );
}
