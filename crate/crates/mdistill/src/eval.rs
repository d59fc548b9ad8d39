//! Scoring: frame accuracy, token error rate via edit distance, per-domain
//! report grids with relative deltas against a baseline, and learning-curve
//! export.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::losses::{greedy_decode, LossError, PosteriorSeq};
use crate::netgraph::{forward, ModelParams, NetError, NetworkSpec};
use crate::parallel::parallel_map;
use crate::synthcorpus::ProcessedUtterance;
use crate::trainer::{MetricsLog, TaskMode};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot evaluate an empty utterance set")]
    EmptySet,
    #[error("baseline model `{0}` not present among the results")]
    MissingBaseline(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Scores for one (model, domain, split) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub model_name: String,
    pub domain_name: String,
    pub split: String,
    pub frame_acc: f64,
    pub ter: f64,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_tokens: usize,
}

/// Fraction of frames whose argmax posterior (ties to the lowest label id)
/// equals the frame label.
pub fn frame_accuracy(
    params: &ModelParams,
    spec: &NetworkSpec,
    utterances: &[ProcessedUtterance],
    threads: usize,
) -> Result<f64, EvalError> {
    if utterances.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let counts = parallel_map(utterances.len(), threads, |i| {
        let utt = &utterances[i];
        let (logits, _) = forward(params, spec, &utt.view.frames).expect("matching dims");
        let mut correct = 0usize;
        for (t, &label) in utt.view.frame_labels.iter().enumerate() {
            if crate::losses::argmax_row(logits.row(t)) == label {
                correct += 1;
            }
        }
        (correct, utt.view.frame_labels.len())
    });
    let (correct, total) = counts
        .into_iter()
        .fold((0usize, 0usize), |(c, t), (dc, dt)| (c + dc, t + dt));
    Ok(correct as f64 / total as f64)
}

/// Minimal edit counts `(substitutions, deletions, insertions)` turning
/// `hyp` into `reference`.
///
/// Among minimal-cost alignments the one with the most diagonal moves is
/// chosen, which prefers substitutions over deletion/insertion pairs and
/// makes the counts invariant under swapping the arguments (S preserved,
/// D and I exchanged).
pub fn levenshtein(reference: &[usize], hyp: &[usize]) -> (usize, usize, usize) {
    let (m, n) = (reference.len(), hyp.len());
    // Cell = (cost, diagonal moves): minimize cost, then maximize diagonals.
    let mut prev: Vec<(usize, usize)> = (0..=n).map(|j| (j, 0)).collect();
    let mut curr = vec![(0usize, 0usize); n + 1];
    for i in 1..=m {
        curr[0] = (i, 0);
        for j in 1..=n {
            let sub_cost = usize::from(reference[i - 1] != hyp[j - 1]);
            let diag = (prev[j - 1].0 + sub_cost, prev[j - 1].1 + 1);
            let del = (prev[j].0 + 1, prev[j].1);
            let ins = (curr[j - 1].0 + 1, curr[j - 1].1);
            let mut best = diag;
            for cand in [del, ins] {
                if cand.0 < best.0 || (cand.0 == best.0 && cand.1 > best.1) {
                    best = cand;
                }
            }
            curr[j] = best;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    let (edits, diagonal) = prev[n];
    let deletions = m - diagonal;
    let insertions = n - diagonal;
    let substitutions = edits - deletions - insertions;
    (substitutions, deletions, insertions)
}

fn decode_logits(
    logits: &crate::numcore::Matrix,
    task_mode: TaskMode,
) -> Result<Vec<usize>, EvalError> {
    match task_mode {
        TaskMode::Ctc => Ok(greedy_decode(&PosteriorSeq::from_logits(logits)?)),
        TaskMode::FrameCe => {
            let mut out = Vec::new();
            for t in 0..logits.rows() {
                let label = crate::losses::argmax_row(logits.row(t));
                if out.last() != Some(&label) {
                    out.push(label);
                }
            }
            Ok(out)
        }
    }
}

/// Decodes one utterance according to the task mode: best-path CTC collapse
/// (with blank removal) in CTC mode, frame-argmax plus consecutive dedup in
/// frame-CE mode.
pub fn decode_utterance(
    params: &ModelParams,
    spec: &NetworkSpec,
    utt: &ProcessedUtterance,
    task_mode: TaskMode,
) -> Result<Vec<usize>, EvalError> {
    let (logits, _) = forward(params, spec, &utt.view.frames)?;
    decode_logits(&logits, task_mode)
}

/// Micro-averaged token error rate over a split:
/// `ter = sum(S + D + I) / sum(ref tokens)`.
pub fn token_error_rate(
    params: &ModelParams,
    spec: &NetworkSpec,
    utterances: &[ProcessedUtterance],
    task_mode: TaskMode,
    threads: usize,
) -> Result<EvalResult, EvalError> {
    if utterances.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let per_utt = parallel_map(utterances.len(), threads, |i| {
        let utt = &utterances[i];
        let (logits, _) = forward(params, spec, &utt.view.frames)?;
        let hyp = decode_logits(&logits, task_mode)?;
        let (s, d, ins) = levenshtein(&utt.tokens, &hyp);
        let correct = utt
            .view
            .frame_labels
            .iter()
            .enumerate()
            .filter(|(t, &label)| crate::losses::argmax_row(logits.row(*t)) == label)
            .count();
        Ok::<_, EvalError>((s, d, ins, utt.tokens.len(), correct, utt.view.frame_labels.len()))
    });
    let mut totals = (0usize, 0usize, 0usize, 0usize, 0usize, 0usize);
    for item in per_utt {
        let (s, d, i, r, c, f) = item?;
        totals = (
            totals.0 + s,
            totals.1 + d,
            totals.2 + i,
            totals.3 + r,
            totals.4 + c,
            totals.5 + f,
        );
    }
    let (s, d, i, ref_tokens, correct, frames) = totals;
    Ok(EvalResult {
        model_name: String::new(),
        domain_name: String::new(),
        split: String::new(),
        frame_acc: correct as f64 / frames as f64,
        ter: (s + d + i) as f64 / ref_tokens as f64,
        substitutions: s,
        deletions: d,
        insertions: i,
        ref_tokens,
    })
}

/// Scores one model per domain over a split, in manifest domain order.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_per_domain(
    model_name: &str,
    params: &ModelParams,
    spec: &NetworkSpec,
    domains: &[(u32, String)],
    utterances: &[ProcessedUtterance],
    split: &str,
    task_mode: TaskMode,
    threads: usize,
) -> Result<Vec<EvalResult>, EvalError> {
    let mut results = Vec::with_capacity(domains.len());
    for (domain_id, domain_name) in domains {
        let subset: Vec<ProcessedUtterance> = utterances
            .iter()
            .filter(|u| u.domain_id == *domain_id)
            .cloned()
            .collect();
        let mut result = token_error_rate(params, spec, &subset, task_mode, threads)?;
        result.model_name = model_name.to_string();
        result.domain_name = domain_name.clone();
        result.split = split.to_string();
        results.push(result);
    }
    Ok(results)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportCell {
    pub ter: f64,
    /// `(model - baseline) / baseline`; negative is an improvement.
    pub rel_delta: f64,
}

/// Models x domains grid of TER cells with relative deltas vs the baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportGrid {
    pub baseline: String,
    pub domains: Vec<String>,
    pub models: Vec<String>,
    pub cells: Vec<Vec<ReportCell>>,
}

pub fn build_report(results: &[EvalResult], baseline: &str) -> Result<ReportGrid, EvalError> {
    let mut domains: Vec<String> = Vec::new();
    let mut models: Vec<String> = Vec::new();
    for r in results {
        if !domains.contains(&r.domain_name) {
            domains.push(r.domain_name.clone());
        }
        if !models.contains(&r.model_name) {
            models.push(r.model_name.clone());
        }
    }
    if !models.iter().any(|m| m == baseline) {
        return Err(EvalError::MissingBaseline(baseline.to_string()));
    }
    // Baseline row first, remaining models in first-appearance order.
    models.retain(|m| m != baseline);
    models.insert(0, baseline.to_string());

    let lookup = |model: &str, domain: &str| {
        results
            .iter()
            .find(|r| r.model_name == model && r.domain_name == domain)
            .map(|r| r.ter)
    };
    let mut cells = Vec::with_capacity(models.len());
    for model in &models {
        let mut row = Vec::with_capacity(domains.len());
        for domain in &domains {
            let base = lookup(baseline, domain).ok_or_else(|| {
                EvalError::MissingBaseline(format!("{baseline} on {domain}"))
            })?;
            let ter = lookup(model, domain).unwrap_or(f64::NAN);
            row.push(ReportCell {
                ter,
                rel_delta: (ter - base) / base,
            });
        }
        cells.push(row);
    }
    Ok(ReportGrid {
        baseline: baseline.to_string(),
        domains,
        models,
        cells,
    })
}

impl ReportGrid {
    /// Column-aligned text table; deltas rendered as signed percentages with
    /// one decimal.
    pub fn render_text(&self) -> String {
        let mut header = vec!["model".to_string()];
        header.extend(self.domains.iter().map(|d| format!("test-{d}")));
        let mut rows = vec![header];
        for (model, cells) in self.models.iter().zip(&self.cells) {
            let mut row = vec![model.clone()];
            for cell in cells {
                row.push(format!("{:.4} ({:+.1}%)", cell.ter, cell.rel_delta * 100.0));
            }
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in rows {
            for (field, width) in row.iter().zip(&widths) {
                let _ = write!(out, "{field:>width$}  ");
            }
            out.pop();
            out.pop();
            out.push('\n');
        }
        out
    }

    /// `model,domain,ter,rel_delta` rows (rel_delta as a raw fraction).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,domain,ter,rel_delta\n");
        for (model, cells) in self.models.iter().zip(&self.cells) {
            for (domain, cell) in self.domains.iter().zip(cells) {
                let _ = writeln!(out, "{model},{domain},{},{}", cell.ter, cell.rel_delta);
            }
        }
        out
    }
}

/// Writes `model,stage,epoch,split,frame_acc` rows for the overall
/// (domain = "all") train/dev entries of the metrics log.
pub fn export_curves(log: &MetricsLog, path: impl AsRef<Path>) -> Result<(), EvalError> {
    let mut out = String::from("model,stage,epoch,split,frame_acc\n");
    for row in log.rows() {
        if row.domain != "all" {
            continue;
        }
        let stage_kind = if row.stage == "baseline" {
            "multi_condition"
        } else if row.stage.starts_with("teacher_") {
            "fine_tune"
        } else {
            "student"
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.stage, stage_kind, row.epoch, row.split, row.frame_acc
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}
