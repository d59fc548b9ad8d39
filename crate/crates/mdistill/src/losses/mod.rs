//! Training criteria: hard-label cross-entropy, soft-target cross-entropy
//! against teacher posteriors, weighted teacher ensembles, hard/soft target
//! interpolation, CTC (with a brute-force enumeration oracle), and greedy
//! decoding.

mod ctc;

pub use ctc::{ctc_brute_force, ctc_loss, ctc_mixed_loss};

use crate::numcore::{softmax_rows, Matrix, NumError, PROB_FLOOR};
use thiserror::Error;

/// Identifier reserved for the CTC blank symbol.
pub const BLANK: usize = 0;

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("label {label} out of range for {num_labels} labels")]
    LabelOutOfRange { label: usize, num_labels: usize },
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("row {row} is not on the simplex (sum {sum})")]
    NotSimplex { row: usize, sum: f64 },
    #[error("ensemble weights must be non-negative and sum to 1 (sum {0})")]
    BadEnsembleWeights(f64),
    #[error("ensemble requires at least one posterior sequence")]
    EmptyEnsemble,
    #[error("interpolation weight {0} outside [0, 1]")]
    BadInterpolationWeight(f64),
    #[error("no valid alignment: token sequence does not fit in the frame count")]
    NoValidAlignment,
    #[error("token sequence must be non-empty")]
    EmptyTokens,
    #[error("brute-force enumeration limited to {bound} frames, got {frames}")]
    EnumerationBound { frames: usize, bound: usize },
    #[error(transparent)]
    Num(#[from] NumError),
}

fn check_simplex(rows: &Matrix) -> Result<(), LossError> {
    for r in 0..rows.rows() {
        let mut sum = 0.0;
        for &v in rows.row(r) {
            if v < 0.0 || !v.is_finite() {
                return Err(LossError::NotSimplex { row: r, sum: v });
            }
            sum += v;
        }
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(LossError::NotSimplex { row: r, sum });
        }
    }
    Ok(())
}

/// Per-frame probability distributions over the output label set.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSeq {
    rows: Matrix,
}

impl PosteriorSeq {
    pub fn new(rows: Matrix) -> Result<PosteriorSeq, LossError> {
        check_simplex(&rows)?;
        Ok(PosteriorSeq { rows })
    }

    pub fn from_logits(logits: &Matrix) -> Result<PosteriorSeq, LossError> {
        Ok(PosteriorSeq {
            rows: softmax_rows(logits)?,
        })
    }

    pub fn rows(&self) -> &Matrix {
        &self.rows
    }

    pub fn frames(&self) -> usize {
        self.rows.rows()
    }

    pub fn labels(&self) -> usize {
        self.rows.cols()
    }
}

/// Per-frame training targets (rows on the simplex).
#[derive(Clone, Debug, PartialEq)]
pub struct TargetDistribution {
    rows: Matrix,
}

impl TargetDistribution {
    pub fn new(rows: Matrix) -> Result<TargetDistribution, LossError> {
        check_simplex(&rows)?;
        Ok(TargetDistribution { rows })
    }

    /// One-hot rows for the given frame labels.
    pub fn one_hot(frame_labels: &[usize], num_labels: usize) -> Result<TargetDistribution, LossError> {
        let mut rows = Matrix::zeros(frame_labels.len(), num_labels);
        for (t, &label) in frame_labels.iter().enumerate() {
            if label >= num_labels {
                return Err(LossError::LabelOutOfRange { label, num_labels });
            }
            rows[(t, label)] = 1.0;
        }
        Ok(TargetDistribution { rows })
    }

    pub fn rows(&self) -> &Matrix {
        &self.rows
    }
}

/// Loss value plus the gradient with respect to the logits.
#[derive(Clone, Debug)]
pub struct LossResult {
    pub loss: f64,
    pub dlogits: Matrix,
}

fn soft_target_core(targets: &Matrix, logits: &Matrix) -> Result<LossResult, LossError> {
    if !targets.same_shape(logits) {
        return Err(LossError::ShapeMismatch {
            expected: format!("{}x{}", targets.rows(), targets.cols()),
            actual: format!("{}x{}", logits.rows(), logits.cols()),
        });
    }
    let posteriors = softmax_rows(logits)?;
    let frames = logits.rows() as f64;
    let mut dlogits = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for t in 0..logits.rows() {
        let mut frame_loss = 0.0;
        let (p_row, t_row) = (posteriors.row(t), targets.row(t));
        for ((d, &p), &target) in dlogits.row_mut(t).iter_mut().zip(p_row).zip(t_row) {
            frame_loss -= target * p.max(PROB_FLOOR).ln();
            *d = (p - target) / frames;
        }
        loss += frame_loss;
    }
    Ok(LossResult {
        loss: loss / frames,
        dlogits,
    })
}

/// Frame-mean cross-entropy against hard labels.
pub fn hard_ce(frame_labels: &[usize], logits: &Matrix) -> Result<LossResult, LossError> {
    if frame_labels.len() != logits.rows() {
        return Err(LossError::ShapeMismatch {
            expected: format!("{} frame labels", logits.rows()),
            actual: format!("{}", frame_labels.len()),
        });
    }
    let one_hot = TargetDistribution::one_hot(frame_labels, logits.cols())?;
    // Delegating keeps hard CE bit-identical to soft CE on one-hot targets.
    soft_target_core(&one_hot.rows, logits)
}

/// Frame-mean cross-entropy against full target distributions:
/// `-(1/T) sum_t sum_l target[t,l] log p_s[t,l]`, the distillation criterion
/// for fixed teacher targets.
pub fn soft_target_ce(
    targets: &TargetDistribution,
    logits: &Matrix,
) -> Result<LossResult, LossError> {
    check_simplex(&targets.rows)?;
    soft_target_core(&targets.rows, logits)
}

/// Weighted ensemble of teacher posteriors:
/// `p_t(l|x) = sum_k w_k p_tk(l|x)`. Kept as the comparison baseline the
/// domain-routed provider is measured against.
pub fn ensemble_posterior(
    teacher_posteriors: &[PosteriorSeq],
    weights: &[f64],
) -> Result<PosteriorSeq, LossError> {
    if teacher_posteriors.is_empty() {
        return Err(LossError::EmptyEnsemble);
    }
    if weights.len() != teacher_posteriors.len() {
        return Err(LossError::ShapeMismatch {
            expected: format!("{} weights", teacher_posteriors.len()),
            actual: format!("{}", weights.len()),
        });
    }
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(LossError::BadEnsembleWeights(sum));
    }
    let first = &teacher_posteriors[0];
    let mut rows = Matrix::zeros(first.frames(), first.labels());
    for (posterior, &w) in teacher_posteriors.iter().zip(weights) {
        if !posterior.rows.same_shape(&rows) {
            return Err(LossError::ShapeMismatch {
                expected: format!("{}x{}", rows.rows(), rows.cols()),
                actual: format!("{}x{}", posterior.frames(), posterior.labels()),
            });
        }
        rows.axpy(w, &posterior.rows);
    }
    PosteriorSeq::new(rows)
}

/// Linear interpolation of soft teacher targets with one-hot hard labels:
/// `(1 - w_hard) * soft + w_hard * one_hot` per frame.
pub fn interpolate_targets(
    soft: &PosteriorSeq,
    frame_labels: &[usize],
    w_hard: f64,
) -> Result<TargetDistribution, LossError> {
    if !(0.0..=1.0).contains(&w_hard) {
        return Err(LossError::BadInterpolationWeight(w_hard));
    }
    if frame_labels.len() != soft.frames() {
        return Err(LossError::ShapeMismatch {
            expected: format!("{} frame labels", soft.frames()),
            actual: format!("{}", frame_labels.len()),
        });
    }
    let num_labels = soft.labels();
    let mut rows = soft.rows.clone();
    rows.scale(1.0 - w_hard);
    for (t, &label) in frame_labels.iter().enumerate() {
        if label >= num_labels {
            return Err(LossError::LabelOutOfRange { label, num_labels });
        }
        if w_hard == 1.0 {
            // Exact one-hot rows, untouched by rounding.
            rows.row_mut(t).fill(0.0);
            rows[(t, label)] = 1.0;
        } else {
            rows[(t, label)] += w_hard;
        }
    }
    TargetDistribution::new(rows)
}

/// Best-path decoding: per-frame argmax (ties to the lowest label id),
/// collapse consecutive repeats, then drop blanks.
pub fn greedy_decode(posteriors: &PosteriorSeq) -> Vec<usize> {
    let path: Vec<usize> = (0..posteriors.frames())
        .map(|t| argmax_row(posteriors.rows.row(t)))
        .collect();
    collapse_path(&path)
}

pub(crate) fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (idx, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = idx;
        }
    }
    best
}

/// Removes consecutive repeats, then blanks.
pub(crate) fn collapse_path(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &label in path {
        if Some(label) != prev {
            if label != BLANK {
                out.push(label);
            }
            prev = Some(label);
        }
    }
    out
}

/// Mean per-frame entropy of a stack of distributions, with the same
/// probability floor as the cross-entropy losses. Subtracting it from the
/// soft-target cross-entropy gives the true KL divergence.
pub fn mean_entropy(rows: &Matrix) -> f64 {
    let mut total = 0.0;
    for r in 0..rows.rows() {
        for &p in rows.row(r) {
            if p > 0.0 {
                total -= p * p.max(PROB_FLOOR).ln();
            }
        }
    }
    total / rows.rows() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{finite_diff_grad, max_rel_error, RngStream};
    use proptest::prelude::*;

    fn random_logits(rng: &mut RngStream, frames: usize, labels: usize) -> Matrix {
        let data = (0..frames * labels).map(|_| rng.uniform(-2.0, 2.0)).collect();
        Matrix::from_vec(frames, labels, data).unwrap()
    }

    #[test]
    fn hard_ce_uniform_logits() {
        let logits = Matrix::zeros(3, 4);
        let result = hard_ce(&[0, 2, 3], &logits).unwrap();
        assert!((result.loss - 4.0f64.ln()).abs() < 1e-12);
        assert!((result.loss - 1.3862943611).abs() < 1e-9);
    }

    #[test]
    fn hard_ce_peaked_logits() {
        let mut logits = Matrix::zeros(2, 3);
        logits[(0, 1)] = 1000.0;
        logits[(1, 0)] = 1000.0;
        let result = hard_ce(&[1, 0], &logits).unwrap();
        assert!(result.loss.abs() < 1e-9);
    }

    #[test]
    fn hard_ce_rejects_out_of_range_label() {
        let logits = Matrix::zeros(2, 3);
        assert!(matches!(
            hard_ce(&[0, 3], &logits),
            Err(LossError::LabelOutOfRange { label: 3, .. })
        ));
    }

    #[test]
    fn hard_ce_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(21, 0);
        for _ in 0..5 {
            let frames = rng.uniform_usize(1, 5);
            let labels = rng.uniform_usize(2, 6);
            let logits = random_logits(&mut rng, frames, labels);
            let frame_labels: Vec<usize> =
                (0..frames).map(|_| rng.uniform_usize(0, labels - 1)).collect();
            let analytic = hard_ce(&frame_labels, &logits).unwrap();
            let numeric = finite_diff_grad(
                |flat| {
                    let l = Matrix::from_vec(frames, labels, flat.to_vec()).unwrap();
                    hard_ce(&frame_labels, &l).unwrap().loss
                },
                logits.data(),
                1e-5,
            );
            let err = max_rel_error(analytic.dlogits.data(), &numeric);
            assert!(err < 1e-6, "rel err {err}");
        }
    }

    #[test]
    fn soft_ce_on_own_posterior_hits_entropy_with_zero_gradient() {
        let mut rng = RngStream::new(22, 0);
        let logits = random_logits(&mut rng, 4, 5);
        let posterior = softmax_rows(&logits).unwrap();
        let targets = TargetDistribution::new(posterior.clone()).unwrap();
        let result = soft_target_ce(&targets, &logits).unwrap();
        assert!((result.loss - mean_entropy(&posterior)).abs() < 1e-12);
        assert!(result.dlogits.data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn soft_ce_with_one_hot_equals_hard_ce_bitwise() {
        let mut rng = RngStream::new(23, 0);
        for _ in 0..10 {
            let frames = rng.uniform_usize(1, 6);
            let labels = rng.uniform_usize(2, 6);
            let logits = random_logits(&mut rng, frames, labels);
            let frame_labels: Vec<usize> =
                (0..frames).map(|_| rng.uniform_usize(0, labels - 1)).collect();
            let hard = hard_ce(&frame_labels, &logits).unwrap();
            let one_hot = TargetDistribution::one_hot(&frame_labels, labels).unwrap();
            let soft = soft_target_ce(&one_hot, &logits).unwrap();
            assert_eq!(hard.loss.to_bits(), soft.loss.to_bits());
            assert_eq!(hard.dlogits, soft.dlogits);
        }
    }

    #[test]
    fn soft_ce_closed_form_value() {
        // target [0.5, 0.5], posteriors [0.9, 0.1]:
        // loss = -0.5 ln 0.9 - 0.5 ln 0.1 = 1.2039728...
        let logits = Matrix::from_rows(&[vec![0.9f64.ln(), 0.1f64.ln()]]).unwrap();
        let targets =
            TargetDistribution::new(Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap()).unwrap();
        let result = soft_target_ce(&targets, &logits).unwrap();
        assert!((result.loss - 1.2039728043259361).abs() < 1e-9);
    }

    #[test]
    fn soft_ce_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(24, 0);
        for _ in 0..5 {
            let frames = rng.uniform_usize(1, 5);
            let labels = rng.uniform_usize(2, 6);
            let logits = random_logits(&mut rng, frames, labels);
            let targets = TargetDistribution::new(
                softmax_rows(&random_logits(&mut rng, frames, labels)).unwrap(),
            )
            .unwrap();
            let analytic = soft_target_ce(&targets, &logits).unwrap();
            let numeric = finite_diff_grad(
                |flat| {
                    let l = Matrix::from_vec(frames, labels, flat.to_vec()).unwrap();
                    soft_target_ce(&targets, &l).unwrap().loss
                },
                logits.data(),
                1e-5,
            );
            let err = max_rel_error(analytic.dlogits.data(), &numeric);
            assert!(err < 1e-6, "rel err {err}");
        }
    }

    #[test]
    fn soft_ce_rejects_shape_mismatch() {
        let targets =
            TargetDistribution::new(Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap()).unwrap();
        let logits = Matrix::zeros(1, 3);
        assert!(matches!(
            soft_target_ce(&targets, &logits),
            Err(LossError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn ensemble_with_single_teacher_is_identity() {
        let p = PosteriorSeq::new(
            Matrix::from_rows(&[vec![0.3, 0.7], vec![0.9, 0.1]]).unwrap(),
        )
        .unwrap();
        let out = ensemble_posterior(std::slice::from_ref(&p), &[1.0]).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn ensemble_of_identical_posteriors_is_idempotent() {
        let p = PosteriorSeq::new(Matrix::from_rows(&[vec![0.25, 0.75]]).unwrap()).unwrap();
        let out = ensemble_posterior(&[p.clone(), p.clone()], &[0.3, 0.7]).unwrap();
        for (a, b) in out.rows().data().iter().zip(p.rows().data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ensemble_symmetric_mix() {
        let a = PosteriorSeq::new(Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap()).unwrap();
        let b = PosteriorSeq::new(Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap()).unwrap();
        let out = ensemble_posterior(&[a, b], &[0.5, 0.5]).unwrap();
        assert_eq!(out.rows().row(0), &[0.5, 0.5]);
    }

    #[test]
    fn ensemble_rejects_bad_weights() {
        let p = PosteriorSeq::new(Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap()).unwrap();
        assert!(matches!(
            ensemble_posterior(&[p.clone(), p.clone()], &[0.5, 0.6]),
            Err(LossError::BadEnsembleWeights(_))
        ));
        assert!(matches!(
            ensemble_posterior(&[p.clone(), p], &[1.5, -0.5]),
            Err(LossError::BadEnsembleWeights(_))
        ));
    }

    #[test]
    fn interpolate_hard_only_is_exact_one_hot() {
        let soft = PosteriorSeq::new(Matrix::from_rows(&[vec![0.4, 0.6]]).unwrap()).unwrap();
        let t = interpolate_targets(&soft, &[1], 1.0).unwrap();
        assert_eq!(t.rows().row(0), &[0.0, 1.0]);
    }

    #[test]
    fn interpolate_default_weight_example() {
        // w_hard = 0.8, soft row [0.5, 0.5], hard label 0 -> [0.9, 0.1].
        let soft = PosteriorSeq::new(Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap()).unwrap();
        let t = interpolate_targets(&soft, &[0], 0.8).unwrap();
        assert!((t.rows()[(0, 0)] - 0.9).abs() < 1e-12);
        assert!((t.rows()[(0, 1)] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn interpolate_rejects_bad_weight() {
        let soft = PosteriorSeq::new(Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap()).unwrap();
        assert!(matches!(
            interpolate_targets(&soft, &[0], 1.5),
            Err(LossError::BadInterpolationWeight(_))
        ));
        assert!(matches!(
            interpolate_targets(&soft, &[0], -0.1),
            Err(LossError::BadInterpolationWeight(_))
        ));
    }

    #[test]
    fn greedy_decode_collapses_repeats_and_blanks() {
        // argmax path [a, a, blank, b] -> [a, b] with a=1, b=2.
        let rows = Matrix::from_rows(&[
            vec![0.1, 0.8, 0.1],
            vec![0.2, 0.7, 0.1],
            vec![0.9, 0.05, 0.05],
            vec![0.1, 0.2, 0.7],
        ])
        .unwrap();
        let posteriors = PosteriorSeq::new(rows).unwrap();
        assert_eq!(greedy_decode(&posteriors), vec![1, 2]);
    }

    #[test]
    fn greedy_decode_all_blank_is_empty() {
        let rows = Matrix::from_rows(&[vec![0.9, 0.1], vec![0.8, 0.2]]).unwrap();
        let posteriors = PosteriorSeq::new(rows).unwrap();
        assert!(greedy_decode(&posteriors).is_empty());
    }

    #[test]
    fn greedy_decode_blank_separates_repeats() {
        // path [a, blank, a] -> [a, a].
        let rows = Matrix::from_rows(&[
            vec![0.1, 0.9],
            vec![0.9, 0.1],
            vec![0.1, 0.9],
        ])
        .unwrap();
        let posteriors = PosteriorSeq::new(rows).unwrap();
        assert_eq!(greedy_decode(&posteriors), vec![1, 1]);
    }

    #[test]
    fn argmax_ties_break_to_lowest_id() {
        assert_eq!(argmax_row(&[0.5, 0.5, 0.0]), 0);
        assert_eq!(argmax_row(&[0.1, 0.45, 0.45]), 1);
    }

    proptest! {
        #[test]
        fn ce_dlogits_rows_sum_to_zero(seed in 0u64..200) {
            let mut rng = RngStream::new(seed, 40);
            let frames = rng.uniform_usize(1, 5);
            let labels = rng.uniform_usize(2, 6);
            let logits = random_logits(&mut rng, frames, labels);
            let frame_labels: Vec<usize> =
                (0..frames).map(|_| rng.uniform_usize(0, labels - 1)).collect();
            let hard = hard_ce(&frame_labels, &logits).unwrap();
            let soft_rows = softmax_rows(&random_logits(&mut rng, frames, labels)).unwrap();
            let soft = soft_target_ce(&TargetDistribution::new(soft_rows).unwrap(), &logits).unwrap();
            for result in [hard, soft] {
                for t in 0..frames {
                    let sum: f64 = result.dlogits.row(t).iter().sum();
                    prop_assert!(sum.abs() < 1e-9);
                }
            }
        }

        #[test]
        fn soft_ce_bounded_below_by_target_entropy(seed in 0u64..200) {
            let mut rng = RngStream::new(seed, 41);
            let frames = rng.uniform_usize(1, 5);
            let labels = rng.uniform_usize(2, 6);
            let logits = random_logits(&mut rng, frames, labels);
            let target_rows = softmax_rows(&random_logits(&mut rng, frames, labels)).unwrap();
            let targets = TargetDistribution::new(target_rows.clone()).unwrap();
            let result = soft_target_ce(&targets, &logits).unwrap();
            prop_assert!(result.loss >= mean_entropy(&target_rows) - 1e-9);
        }

        #[test]
        fn interpolation_and_ensembles_stay_on_simplex(seed in 0u64..200) {
            let mut rng = RngStream::new(seed, 42);
            let frames = rng.uniform_usize(1, 4);
            let labels = rng.uniform_usize(2, 5);
            let a = PosteriorSeq::new(softmax_rows(&random_logits(&mut rng, frames, labels)).unwrap()).unwrap();
            let b = PosteriorSeq::new(softmax_rows(&random_logits(&mut rng, frames, labels)).unwrap()).unwrap();
            let w = rng.next_f64();
            // Constructors validate the simplex property; unwrap is the assertion.
            let mixed = ensemble_posterior(&[a, b], &[w, 1.0 - w]).unwrap();
            let labels_vec: Vec<usize> =
                (0..frames).map(|_| rng.uniform_usize(0, labels - 1)).collect();
            let w_hard = rng.next_f64();
            let _ = interpolate_targets(&mixed, &labels_vec, w_hard).unwrap();
        }
    }
}
