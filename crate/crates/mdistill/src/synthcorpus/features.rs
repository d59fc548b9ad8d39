//! Feature pipeline: first/second-order derivative append, frame stacking
//! with subsampling, and global mean-variance normalization fitted on the
//! training split.

use crate::numcore::Matrix;

use super::{CorpusError, Utterance};

/// Consecutive frames concatenated per stacked frame.
pub const STACK_FRAMES: usize = 8;
/// Anchor stride of the subsampling.
pub const SUBSAMPLE_STRIDE: usize = 3;

/// Processed frames with remapped frame labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureView {
    pub frames: Matrix,
    pub frame_labels: Vec<usize>,
}

/// A fully processed utterance: the feature view plus provenance needed for
/// routing and scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessedUtterance {
    pub utterance_id: u64,
    pub domain_id: u32,
    pub tokens: Vec<usize>,
    pub view: FeatureView,
}

/// Appends first and second symmetric differences:
/// `delta_t = (x_{t+1} - x_{t-1}) / 2` with edge clamping, applied twice,
/// concatenated as `[x | delta | delta-delta]` (T x 3D).
pub fn compute_deltas(frames: &Matrix) -> Matrix {
    let (t_len, dim) = (frames.rows(), frames.cols());
    let delta = symmetric_difference(frames);
    let delta2 = symmetric_difference(&delta);
    let mut out = Matrix::zeros(t_len, 3 * dim);
    for t in 0..t_len {
        let row = out.row_mut(t);
        row[..dim].copy_from_slice(frames.row(t));
        row[dim..2 * dim].copy_from_slice(delta.row(t));
        row[2 * dim..].copy_from_slice(delta2.row(t));
    }
    out
}

fn symmetric_difference(frames: &Matrix) -> Matrix {
    let t_len = frames.rows();
    let mut out = Matrix::zeros(t_len, frames.cols());
    for t in 0..t_len {
        let next = frames.row((t + 1).min(t_len - 1));
        let prev = frames.row(t.saturating_sub(1));
        for ((o, &n), &p) in out.row_mut(t).iter_mut().zip(next).zip(prev) {
            *o = (n - p) / 2.0;
        }
    }
    out
}

/// Stacks `STACK_FRAMES` consecutive frames at anchors 0, 3, 6, ... (frames
/// past the end repeat the last frame) and keeps the anchor's label, so
/// `T'' = ceil(T / 3)` and the dimension grows eightfold.
pub fn stack_subsample(frames: &Matrix, frame_labels: &[usize]) -> FeatureView {
    assert_eq!(frames.rows(), frame_labels.len(), "label count");
    let (t_len, dim) = (frames.rows(), frames.cols());
    let anchors: Vec<usize> = (0..t_len).step_by(SUBSAMPLE_STRIDE).collect();
    let mut out = Matrix::zeros(anchors.len(), STACK_FRAMES * dim);
    let mut labels = Vec::with_capacity(anchors.len());
    for (i, &anchor) in anchors.iter().enumerate() {
        let row = out.row_mut(i);
        for k in 0..STACK_FRAMES {
            let src = frames.row((anchor + k).min(t_len - 1));
            row[k * dim..(k + 1) * dim].copy_from_slice(src);
        }
        labels.push(frame_labels[anchor]);
    }
    FeatureView {
        frames: out,
        frame_labels: labels,
    }
}

/// Deltas followed by stacking; normalization is applied separately so the
/// statistics can be fitted on the training split alone.
pub fn feature_pipeline(utterance: &Utterance) -> ProcessedUtterance {
    let with_deltas = compute_deltas(&utterance.frames);
    let view = stack_subsample(&with_deltas, &utterance.frame_labels);
    ProcessedUtterance {
        utterance_id: utterance.utterance_id,
        domain_id: utterance.domain_id,
        tokens: utterance.tokens.clone(),
        view,
    }
}

/// Per-dimension mean and standard deviation over a training split, with the
/// standard deviation floored at 1e-8.
#[derive(Clone, Debug, PartialEq)]
pub struct MvnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const MVN_STD_FLOOR: f64 = 1e-8;

pub fn fit_global_mvn<'a>(
    views: impl IntoIterator<Item = &'a FeatureView> + Clone,
) -> Result<MvnStats, CorpusError> {
    let mut dim = None;
    let mut count = 0usize;
    let mut mean: Vec<f64> = Vec::new();
    for view in views.clone() {
        if dim.is_none() {
            dim = Some(view.frames.cols());
            mean = vec![0.0; view.frames.cols()];
        }
        for t in 0..view.frames.rows() {
            for (m, &v) in mean.iter_mut().zip(view.frames.row(t)) {
                *m += v;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(CorpusError::EmptyTrainingSet);
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    let mut var = vec![0.0; mean.len()];
    for view in views {
        for t in 0..view.frames.rows() {
            for ((s, &v), &m) in var.iter_mut().zip(view.frames.row(t)).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
    }
    let std = var
        .iter()
        .map(|&s| (s / count as f64).sqrt().max(MVN_STD_FLOOR))
        .collect();
    Ok(MvnStats { mean, std })
}

pub fn apply_mvn(view: &FeatureView, stats: &MvnStats) -> FeatureView {
    assert_eq!(view.frames.cols(), stats.mean.len(), "mvn dimension");
    let mut frames = view.frames.clone();
    for t in 0..frames.rows() {
        for ((v, &m), &s) in frames.row_mut(t).iter_mut().zip(&stats.mean).zip(&stats.std) {
            *v = (*v - m) / s;
        }
    }
    FeatureView {
        frames,
        frame_labels: view.frame_labels.clone(),
    }
}
