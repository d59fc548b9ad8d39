//! CTC loss in log space over the blank-augmented label sequence, its exact
//! gradient via the alignment posterior, and a brute-force path-enumeration
//! oracle for small instances.

use crate::numcore::{softmax_rows, Matrix, PROB_FLOOR};

use super::{collapse_path, soft_target_ce, LossError, LossResult, PosteriorSeq, BLANK};

const NEG_INF: f64 = f64::NEG_INFINITY;

fn lse2(a: f64, b: f64) -> f64 {
    if a == NEG_INF && b == NEG_INF {
        NEG_INF
    } else if a >= b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

fn lse3(a: f64, b: f64, c: f64) -> f64 {
    lse2(lse2(a, b), c)
}

fn validate_tokens(tokens: &[usize], num_labels: usize) -> Result<(), LossError> {
    if tokens.is_empty() {
        return Err(LossError::EmptyTokens);
    }
    for &token in tokens {
        if token == BLANK || token >= num_labels {
            return Err(LossError::LabelOutOfRange {
                label: token,
                num_labels,
            });
        }
    }
    Ok(())
}

/// Shortest frame count that admits a valid alignment: one frame per token
/// plus a separating blank between adjacent repeats.
fn min_alignment_frames(tokens: &[usize]) -> usize {
    let repeats = tokens.windows(2).filter(|w| w[0] == w[1]).count();
    tokens.len() + repeats
}

/// Blank-augmented label sequence of length 2K + 1.
fn extended_labels(tokens: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * tokens.len() + 1);
    ext.push(BLANK);
    for &token in tokens {
        ext.push(token);
        ext.push(BLANK);
    }
    ext
}

/// CTC loss `-log p(tokens | softmax(logits))` via the log-space forward
/// recursion, with the exact per-utterance gradient
/// `dlogits[t,l] = p[t,l] - q[t,l]` where `q` is the alignment posterior
/// computed from the forward and backward variables.
pub fn ctc_loss(logits: &Matrix, tokens: &[usize]) -> Result<LossResult, LossError> {
    let frames = logits.rows();
    let num_labels = logits.cols();
    validate_tokens(tokens, num_labels)?;
    if frames < min_alignment_frames(tokens) {
        return Err(LossError::NoValidAlignment);
    }

    let posteriors = softmax_rows(logits)?;
    let mut log_p = posteriors.clone();
    for v in log_p.data_mut() {
        *v = v.max(PROB_FLOOR).ln();
    }

    let ext = extended_labels(tokens);
    let states = ext.len();

    // Forward variables: alpha[t][s] includes the emission at frame t.
    let mut alpha = Matrix::filled(frames, states, NEG_INF);
    alpha[(0, 0)] = log_p[(0, BLANK)];
    alpha[(0, 1)] = log_p[(0, ext[1])];
    for t in 1..frames {
        for s in 0..states {
            let stay = alpha[(t - 1, s)];
            let step = if s >= 1 { alpha[(t - 1, s - 1)] } else { NEG_INF };
            let skip = if s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2] {
                alpha[(t - 1, s - 2)]
            } else {
                NEG_INF
            };
            let merged = lse3(stay, step, skip);
            if merged != NEG_INF {
                alpha[(t, s)] = merged + log_p[(t, ext[s])];
            }
        }
    }
    let log_total = lse2(alpha[(frames - 1, states - 1)], alpha[(frames - 1, states - 2)]);
    if log_total == NEG_INF {
        return Err(LossError::NoValidAlignment);
    }

    // Backward variables: beta[t][s] excludes the emission at frame t, so
    // alpha + beta is the log-probability of all paths through state s at t.
    let mut beta = Matrix::filled(frames, states, NEG_INF);
    beta[(frames - 1, states - 1)] = 0.0;
    beta[(frames - 1, states - 2)] = 0.0;
    for t in (0..frames.saturating_sub(1)).rev() {
        for s in 0..states {
            let stay = beta[(t + 1, s)] + log_p[(t + 1, ext[s])];
            let step = if s + 1 < states {
                beta[(t + 1, s + 1)] + log_p[(t + 1, ext[s + 1])]
            } else {
                NEG_INF
            };
            let skip = if s + 2 < states && ext[s + 2] != BLANK && ext[s + 2] != ext[s] {
                beta[(t + 1, s + 2)] + log_p[(t + 1, ext[s + 2])]
            } else {
                NEG_INF
            };
            beta[(t, s)] = lse3(stay, step, skip);
        }
    }

    // Alignment posterior per frame and label and the gradient.
    let mut dlogits = posteriors.clone();
    let mut occupancy = vec![NEG_INF; num_labels];
    for t in 0..frames {
        occupancy.fill(NEG_INF);
        for s in 0..states {
            let gamma = alpha[(t, s)] + beta[(t, s)];
            if gamma != NEG_INF {
                occupancy[ext[s]] = lse2(occupancy[ext[s]], gamma);
            }
        }
        for (d, &occ) in dlogits.row_mut(t).iter_mut().zip(&occupancy) {
            if occ != NEG_INF {
                *d -= (occ - log_total).exp();
            }
        }
    }

    Ok(LossResult {
        loss: -log_total,
        dlogits,
    })
}

/// Independent oracle: enumerates every `labels^frames` frame-label path,
/// sums the probability of those that collapse (dedup repeats, drop blanks)
/// to `tokens`, and returns `-log` of the sum. Bounded to 10 frames.
pub fn ctc_brute_force(posteriors: &PosteriorSeq, tokens: &[usize]) -> Result<f64, LossError> {
    const BOUND: usize = 10;
    let frames = posteriors.frames();
    let num_labels = posteriors.labels();
    if frames > BOUND {
        return Err(LossError::EnumerationBound {
            frames,
            bound: BOUND,
        });
    }
    validate_tokens(tokens, num_labels)?;
    if tokens.len() > frames {
        return Err(LossError::NoValidAlignment);
    }

    let rows = posteriors.rows();
    let mut path = vec![0usize; frames];
    let mut total = 0.0f64;
    let mut any = false;
    loop {
        if collapse_path(&path) == tokens {
            let mut prob = 1.0;
            for (t, &label) in path.iter().enumerate() {
                prob *= rows[(t, label)];
            }
            total += prob;
            any = true;
        }
        // Advance the path like a base-`num_labels` counter.
        let mut pos = 0;
        loop {
            if pos == frames {
                if !any {
                    return Err(LossError::NoValidAlignment);
                }
                return Ok(-total.ln());
            }
            path[pos] += 1;
            if path[pos] < num_labels {
                break;
            }
            path[pos] = 0;
            pos += 1;
        }
    }
}

/// Combined criterion for CTC-mode distillation:
/// `(1 - w_hard) * soft_target_ce(soft, logits) + w_hard * ctc(logits, tokens)`.
/// The soft term is a frame mean, the CTC term an utterance sum, matching
/// the reductions used by the trainer.
pub fn ctc_mixed_loss(
    logits: &Matrix,
    soft: &PosteriorSeq,
    tokens: &[usize],
    w_hard: f64,
) -> Result<LossResult, LossError> {
    if !(0.0..=1.0).contains(&w_hard) {
        return Err(LossError::BadInterpolationWeight(w_hard));
    }
    let soft_part = soft_target_ce(&super::TargetDistribution::new(soft.rows().clone())?, logits)?;
    let ctc_part = ctc_loss(logits, tokens)?;
    let mut dlogits = soft_part.dlogits;
    dlogits.scale(1.0 - w_hard);
    dlogits.axpy(w_hard, &ctc_part.dlogits);
    Ok(LossResult {
        loss: (1.0 - w_hard) * soft_part.loss + w_hard * ctc_part.loss,
        dlogits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{finite_diff_grad, max_rel_error, RngStream};

    fn random_logits(rng: &mut RngStream, frames: usize, labels: usize) -> Matrix {
        let data = (0..frames * labels).map(|_| rng.uniform(-2.0, 2.0)).collect();
        Matrix::from_vec(frames, labels, data).unwrap()
    }

    /// Random instance guaranteed to admit at least one alignment.
    fn random_instance(rng: &mut RngStream) -> (Matrix, Vec<usize>) {
        loop {
            let labels = rng.uniform_usize(2, 5);
            let k = rng.uniform_usize(1, 3);
            let tokens: Vec<usize> = (0..k).map(|_| rng.uniform_usize(1, labels - 1)).collect();
            let min_frames = min_alignment_frames(&tokens);
            if min_frames > 8 {
                continue;
            }
            let frames = rng.uniform_usize(min_frames, 8);
            return (random_logits(rng, frames, labels), tokens);
        }
    }

    #[test]
    fn single_frame_single_token() {
        // posterior row [blank: 0.2, c: 0.8] -> loss = -ln 0.8.
        let logits = Matrix::from_rows(&[vec![0.2f64.ln(), 0.8f64.ln()]]).unwrap();
        let result = ctc_loss(&logits, &[1]).unwrap();
        assert!((result.loss - (-0.8f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn two_frames_single_token_matches_hand_enumeration() {
        // Valid paths {(c,c), (c,blank), (blank,c)}.
        let rows = Matrix::from_rows(&[vec![0.3, 0.7], vec![0.6, 0.4]]).unwrap();
        let expected = -(0.7 * 0.4 + 0.7 * 0.6 + 0.3 * 0.4f64).ln();
        let posteriors = PosteriorSeq::new(rows.clone()).unwrap();
        let brute = ctc_brute_force(&posteriors, &[1]).unwrap();
        assert!((brute - expected).abs() < 1e-12);

        let mut logits = rows;
        for v in logits.data_mut() {
            *v = v.ln();
        }
        let dp = ctc_loss(&logits, &[1]).unwrap();
        assert!((dp.loss - expected).abs() < 1e-12);
    }

    #[test]
    fn too_many_tokens_for_frames_is_rejected() {
        let logits = Matrix::zeros(2, 4);
        assert!(matches!(
            ctc_loss(&logits, &[1, 2, 3]),
            Err(LossError::NoValidAlignment)
        ));
        // Repeated tokens need a separating blank frame.
        assert!(matches!(
            ctc_loss(&logits, &[1, 1]),
            Err(LossError::NoValidAlignment)
        ));
        let posteriors = PosteriorSeq::from_logits(&logits).unwrap();
        assert!(matches!(
            ctc_brute_force(&posteriors, &[1, 2, 3]),
            Err(LossError::NoValidAlignment)
        ));
    }

    #[test]
    fn blank_token_is_rejected() {
        let logits = Matrix::zeros(3, 4);
        assert!(matches!(
            ctc_loss(&logits, &[0]),
            Err(LossError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn enumeration_bound_is_enforced() {
        let posteriors = PosteriorSeq::from_logits(&Matrix::zeros(11, 3)).unwrap();
        assert!(matches!(
            ctc_brute_force(&posteriors, &[1]),
            Err(LossError::EnumerationBound { .. })
        ));
    }

    #[test]
    fn ctc_matches_brute_force_on_100_random_instances() {
        let mut rng = RngStream::new(31, 0);
        for case in 0..100 {
            let (logits, tokens) = random_instance(&mut rng);
            let dp = ctc_loss(&logits, &tokens).unwrap();
            let posteriors = PosteriorSeq::from_logits(&logits).unwrap();
            let brute = ctc_brute_force(&posteriors, &tokens).unwrap();
            assert!(
                (dp.loss - brute).abs() < 1e-8,
                "case {case}: dp {} vs brute {} (tokens {tokens:?})",
                dp.loss,
                brute
            );
        }
    }

    #[test]
    fn ctc_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(32, 0);
        for _ in 0..10 {
            let labels = 4;
            let tokens: Vec<usize> = (0..2).map(|_| rng.uniform_usize(1, labels - 1)).collect();
            let frames = 5;
            if min_alignment_frames(&tokens) > frames {
                continue;
            }
            let logits = random_logits(&mut rng, frames, labels);
            let analytic = ctc_loss(&logits, &tokens).unwrap();
            let numeric = finite_diff_grad(
                |flat| {
                    let l = Matrix::from_vec(frames, labels, flat.to_vec()).unwrap();
                    ctc_loss(&l, &tokens).unwrap().loss
                },
                logits.data(),
                1e-5,
            );
            let err = max_rel_error(analytic.dlogits.data(), &numeric);
            assert!(err < 1e-5, "rel err {err}");
        }
    }

    #[test]
    fn ctc_dlogits_rows_sum_to_zero() {
        let mut rng = RngStream::new(33, 0);
        let (logits, tokens) = random_instance(&mut rng);
        let result = ctc_loss(&logits, &tokens).unwrap();
        for t in 0..result.dlogits.rows() {
            let sum: f64 = result.dlogits.row(t).iter().sum();
            assert!(sum.abs() < 1e-9);
        }
    }

    #[test]
    fn mixed_loss_interpolates_endpoints() {
        let mut rng = RngStream::new(34, 0);
        let (logits, tokens) = random_instance(&mut rng);
        let soft = PosteriorSeq::from_logits(&random_logits(
            &mut rng,
            logits.rows(),
            logits.cols(),
        ))
        .unwrap();
        let pure_ctc = ctc_loss(&logits, &tokens).unwrap();
        let mixed_hard = ctc_mixed_loss(&logits, &soft, &tokens, 1.0).unwrap();
        assert!((mixed_hard.loss - pure_ctc.loss).abs() < 1e-12);
        let pure_soft = soft_target_ce(
            &super::super::TargetDistribution::new(soft.rows().clone()).unwrap(),
            &logits,
        )
        .unwrap();
        let mixed_soft = ctc_mixed_loss(&logits, &soft, &tokens, 0.0).unwrap();
        assert!((mixed_soft.loss - pure_soft.loss).abs() < 1e-12);
    }

    #[test]
    fn mixed_loss_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(35, 0);
        for _ in 0..5 {
            let (logits, tokens) = random_instance(&mut rng);
            let soft = PosteriorSeq::from_logits(&random_logits(
                &mut rng,
                logits.rows(),
                logits.cols(),
            ))
            .unwrap();
            let analytic = ctc_mixed_loss(&logits, &soft, &tokens, 0.8).unwrap();
            let numeric = finite_diff_grad(
                |flat| {
                    let l = Matrix::from_vec(logits.rows(), logits.cols(), flat.to_vec()).unwrap();
                    ctc_mixed_loss(&l, &soft, &tokens, 0.8).unwrap().loss
                },
                logits.data(),
                1e-5,
            );
            let err = max_rel_error(analytic.dlogits.data(), &numeric);
            assert!(err < 1e-5, "rel err {err}");
        }
    }
}
