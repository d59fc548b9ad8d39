//! Dense matrix arithmetic, stable softmax / log-sum-exp, seeded random
//! streams, and the finite-difference gradient checker shared by every
//! test suite in the crate.

mod matrix;
mod rng;

pub use matrix::Matrix;
pub use rng::RngStream;

use thiserror::Error;

/// Probabilities are clamped to at least this before any log is taken.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum NumError {
    #[error("non-finite logits")]
    NonFiniteLogits,
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("empty input")]
    EmptyInput,
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(logits: &Matrix) -> Result<Matrix, NumError> {
    if !logits.is_finite() {
        return Err(NumError::NonFiniteLogits);
    }
    let mut out = logits.clone();
    for r in 0..out.rows() {
        softmax_row_in_place(out.row_mut(r));
    }
    Ok(out)
}

pub(crate) fn softmax_row_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// log(sum_i exp(v_i)) with max shift; exact for a single element.
pub fn log_sum_exp(values: &[f64]) -> Result<f64, NumError> {
    if values.is_empty() {
        return Err(NumError::EmptyInput);
    }
    Ok(log_sum_exp_unchecked(values))
}

pub(crate) fn log_sum_exp_unchecked(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Central-difference gradient of `loss_fn` at `params`:
/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` per coordinate.
pub fn finite_diff_grad<F>(mut loss_fn: F, params: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(eps > 0.0, "eps must be positive");
    let mut work = params.to_vec();
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let up = loss_fn(&work);
        work[i] = orig - eps;
        let down = loss_fn(&work);
        work[i] = orig;
        grad[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Largest guarded relative error between two gradient vectors.
///
/// The denominator is floored at 1e-3 so that coordinates with near-zero
/// gradient (e.g. dead ReLU units) are compared on an absolute scale well
/// above the ~1e-11 noise floor of f64 central differences.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_uniform_row() {
        let logits = Matrix::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap();
        let p = softmax_rows(&logits).unwrap();
        for &v in p.row(0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_extreme_logits_stay_stable() {
        let logits = Matrix::from_rows(&[vec![1000.0, 0.0, -1000.0]]).unwrap();
        let p = softmax_rows(&logits).unwrap();
        assert!(p.is_finite());
        assert!((p[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(p[(0, 1)] < 1e-300);
        assert!(p[(0, 2)] < 1e-300);
    }

    #[test]
    fn softmax_known_row() {
        // e^1/(e^1+e^2+e^3) etc., evaluated independently.
        let logits = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let p = softmax_rows(&logits).unwrap();
        let expected = [0.09003057, 0.24472847, 0.66524096];
        for (got, want) in p.row(0).iter().zip(expected) {
            assert!((got - want).abs() < 1e-8, "{} vs {}", got, want);
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        let logits = Matrix::from_vec(1, 2, vec![f64::NAN, 0.0]).unwrap();
        assert_eq!(softmax_rows(&logits), Err(NumError::NonFiniteLogits));
    }

    #[test]
    fn lse_single_element_is_identity() {
        assert_eq!(log_sum_exp(&[3.25]).unwrap(), 3.25);
        assert_eq!(log_sum_exp(&[-17.5]).unwrap(), -17.5);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn lse_two_zeros_is_ln_two() {
        let got = log_sum_exp(&[0.0, 0.0]).unwrap();
        assert!((got - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((got - 0.6931471805599453).abs() < 1e-15);
    }

    #[test]
    fn lse_dominated_term() {
        let got = log_sum_exp(&[-1e9, 0.0]).unwrap();
        assert!(got.abs() < 1e-12);
    }

    #[test]
    fn lse_rejects_empty() {
        assert_eq!(log_sum_exp(&[]), Err(NumError::EmptyInput));
    }

    #[test]
    fn finite_diff_quadratic() {
        let grad = finite_diff_grad(|p| p[0] * p[0], &[3.0], 1e-5);
        assert!((grad[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_constant_and_linear() {
        let grad = finite_diff_grad(|_| 4.0, &[1.0, -2.0, 0.5], 1e-5);
        assert!(grad.iter().all(|&g| g == 0.0));
        let grad = finite_diff_grad(|p| p.iter().sum(), &[1.0, -2.0, 0.5], 1e-5);
        for g in grad {
            assert!((g - 1.0).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(
            rows in 1usize..5,
            cols in 1usize..6,
            seed in 0u64..1000,
        ) {
            let mut rng = RngStream::new(seed, 0);
            let data: Vec<f64> = (0..rows * cols)
                .map(|_| rng.uniform(-1e3, 1e3))
                .collect();
            let logits = Matrix::from_vec(rows, cols, data).unwrap();
            let p = softmax_rows(&logits).unwrap();
            for r in 0..rows {
                let sum: f64 = p.row(r).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                prop_assert!(p.row(r).iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn lse_bounds(values in proptest::collection::vec(-1e3f64..1e3, 1..8)) {
            let lse = log_sum_exp(&values).unwrap();
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lse >= max - 1e-12);
            prop_assert!(lse <= max + (values.len() as f64).ln() + 1e-12);
        }
    }
}
