//! Deterministic synthetic multi-domain corpora.
//!
//! Utterances are piecewise-constant token prototypes plus per-utterance
//! offsets and per-frame noise; far-field-style domains additionally smear
//! frames with an exponential kernel and add noise at a target SNR. Every
//! utterance is a pure function of `(master_seed, domain_id, utterance_id)`.

mod features;
mod io;

pub use features::{
    apply_mvn, compute_deltas, feature_pipeline, fit_global_mvn, stack_subsample, FeatureView,
    MvnStats, ProcessedUtterance, STACK_FRAMES, SUBSAMPLE_STRIDE,
};
pub use io::{read_corpus, write_corpus};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::{Matrix, RngStream};
use crate::parallel::parallel_map;

/// Tokens per utterance are drawn uniformly from this range.
pub const MIN_TOKENS: usize = 4;
pub const MAX_TOKENS: usize = 12;

const PROTOTYPE_SCALE: f64 = 0.8;
const PROTOTYPE_STREAM: u64 = 0x70_726f_746f;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid domain config `{name}`: {reason}")]
    InvalidDomain { name: String, reason: String },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("apply_environment called with neither reverb nor noise configured")]
    NoEnvironment,
    #[error("cannot fit normalization statistics on an empty training set")]
    EmptyTrainingSet,
    #[error("missing manifest: {0}")]
    MissingManifest(String),
    #[error("bad magic: not a corpus split file")]
    BadMagic,
    #[error("unsupported corpus version {0}")]
    VersionMismatch(u32),
    #[error("truncated corpus file")]
    Truncated,
    #[error("corpus inconsistency: {0}")]
    Inconsistent(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest parse error: {0}")]
    Json(#[from] serde_json::Error),
}

/// One synthetic domain: duration statistics, emission noise, per-utterance
/// mean shift, and an optional environment (reverb smearing and/or additive
/// noise at a target SNR).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainConfig {
    pub domain_id: u32,
    pub name: String,
    /// Frames per token, inclusive bounds.
    pub duration_range: (usize, usize),
    pub emission_noise_sigma: f64,
    pub mean_shift_sigma: f64,
    pub reverb_tau: Option<f64>,
    pub reverb_taps: usize,
    pub noise_snr_db: Option<f64>,
}

impl DomainConfig {
    /// Clean domain with no environment.
    pub fn clean(
        domain_id: u32,
        name: &str,
        duration_range: (usize, usize),
        emission_noise_sigma: f64,
        mean_shift_sigma: f64,
    ) -> DomainConfig {
        DomainConfig {
            domain_id,
            name: name.to_string(),
            duration_range,
            emission_noise_sigma,
            mean_shift_sigma,
            reverb_tau: None,
            reverb_taps: 0,
            noise_snr_db: None,
        }
    }

    pub fn has_environment(&self) -> bool {
        self.reverb_tau.is_some() || self.noise_snr_db.is_some()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |reason: &str| {
            Err(CorpusError::InvalidDomain {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        if self.duration_range.0 < 1 || self.duration_range.1 < self.duration_range.0 {
            return fail("duration_range must satisfy 1 <= min <= max");
        }
        if self.emission_noise_sigma < 0.0 || self.mean_shift_sigma < 0.0 {
            return fail("noise sigmas must be non-negative");
        }
        if let Some(tau) = self.reverb_tau {
            if !tau.is_finite() || tau <= 0.0 {
                return fail("reverb_tau must be positive");
            }
        }
        if let Some(snr) = self.noise_snr_db {
            if !snr.is_finite() {
                return fail("noise_snr_db must be finite");
            }
        }
        Ok(())
    }
}

/// Per-domain utterance counts for each split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// Full declarative description of a corpus. Prototype means are drawn once
/// from the master seed when the manifest is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub master_seed: u64,
    pub domains: Vec<DomainConfig>,
    pub splits: SplitCounts,
    pub prototype_means: Vec<Vec<f64>>,
}

impl CorpusManifest {
    pub fn build(
        vocab_size: usize,
        feature_dim: usize,
        master_seed: u64,
        domains: Vec<DomainConfig>,
        splits: SplitCounts,
    ) -> CorpusManifest {
        let mut rng = RngStream::new(master_seed, PROTOTYPE_STREAM);
        let prototype_means = (0..vocab_size)
            .map(|_| {
                (0..feature_dim)
                    .map(|_| rng.gaussian() * PROTOTYPE_SCALE)
                    .collect()
            })
            .collect();
        CorpusManifest {
            vocab_size,
            feature_dim,
            master_seed,
            domains,
            splits,
            prototype_means,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.vocab_size < 2 {
            return Err(CorpusError::InvalidManifest("vocab_size must be >= 2".into()));
        }
        if self.feature_dim == 0 {
            return Err(CorpusError::InvalidManifest("feature_dim must be >= 1".into()));
        }
        if self.domains.is_empty() {
            return Err(CorpusError::InvalidManifest("at least one domain".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for domain in &self.domains {
            domain.validate()?;
            if !seen.insert(domain.domain_id) {
                return Err(CorpusError::InvalidManifest(format!(
                    "duplicate domain_id {}",
                    domain.domain_id
                )));
            }
        }
        if self.splits.train == 0 || self.splits.dev == 0 || self.splits.test == 0 {
            return Err(CorpusError::InvalidManifest(
                "every split needs at least one utterance per domain".into(),
            ));
        }
        if self.prototype_means.len() != self.vocab_size
            || self
                .prototype_means
                .iter()
                .any(|p| p.len() != self.feature_dim)
        {
            return Err(CorpusError::InvalidManifest(
                "prototype_means must be vocab_size x feature_dim".into(),
            ));
        }
        Ok(())
    }

    pub fn domain(&self, domain_id: u32) -> Option<&DomainConfig> {
        self.domains.iter().find(|d| d.domain_id == domain_id)
    }

    pub fn split_count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.splits.train,
            Split::Dev => self.splits.dev,
            Split::Test => self.splits.test,
        }
    }

    /// Network output dimension implied by the vocabulary (tokens 1..=L0
    /// plus the blank at 0).
    pub fn num_labels(&self) -> usize {
        self.vocab_size + 1
    }
}

/// One synthetic sequence: raw frames plus frame-level and token-level
/// labels. Token ids are 1..=vocab_size; 0 is reserved for the CTC blank.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub utterance_id: u64,
    pub domain_id: u32,
    pub frames: Matrix,
    pub frame_labels: Vec<usize>,
    pub tokens: Vec<usize>,
}

/// Deterministic function of `(master_seed, domain_id, utterance_id)`.
///
/// Draw order: token count, tokens (rejecting adjacent repeats so frame
/// labels collapse to the token sequence), per-token durations, the
/// per-utterance offset, per-frame emission noise, then any environment
/// draws. Changing that order changes every corpus.
pub fn generate_utterance(
    manifest: &CorpusManifest,
    domain: &DomainConfig,
    utterance_id: u64,
) -> Utterance {
    let mut rng = RngStream::for_utterance(manifest.master_seed, domain.domain_id, utterance_id);
    let dim = manifest.feature_dim;

    let token_count = rng.uniform_usize(MIN_TOKENS, MAX_TOKENS);
    let mut tokens = Vec::with_capacity(token_count);
    for i in 0..token_count {
        loop {
            let token = rng.uniform_usize(1, manifest.vocab_size);
            if i == 0 || tokens[i - 1] != token {
                tokens.push(token);
                break;
            }
        }
    }
    let durations: Vec<usize> = tokens
        .iter()
        .map(|_| rng.uniform_usize(domain.duration_range.0, domain.duration_range.1))
        .collect();

    let offset: Vec<f64> = (0..dim)
        .map(|_| rng.gaussian() * domain.mean_shift_sigma)
        .collect();

    let total_frames: usize = durations.iter().sum();
    let mut frames = Matrix::zeros(total_frames, dim);
    let mut frame_labels = Vec::with_capacity(total_frames);
    let mut t = 0;
    for (&token, &duration) in tokens.iter().zip(&durations) {
        let prototype = &manifest.prototype_means[token - 1];
        for _ in 0..duration {
            let row = frames.row_mut(t);
            for ((value, &proto), &shift) in row.iter_mut().zip(prototype).zip(&offset) {
                *value = proto + shift + rng.gaussian() * domain.emission_noise_sigma;
            }
            frame_labels.push(token);
            t += 1;
        }
    }

    let frames = if domain.has_environment() {
        apply_environment(&frames, domain, &mut rng).expect("environment configured")
    } else {
        frames
    };

    Utterance {
        utterance_id,
        domain_id: domain.domain_id,
        frames,
        frame_labels,
        tokens,
    }
}

/// Feature-space environment analog: exponential temporal smearing with a
/// normalized kernel, then additive Gaussian noise scaled to the target SNR
/// measured on the (possibly reverberated) utterance.
pub fn apply_environment(
    frames: &Matrix,
    domain: &DomainConfig,
    rng: &mut RngStream,
) -> Result<Matrix, CorpusError> {
    if !domain.has_environment() {
        return Err(CorpusError::NoEnvironment);
    }
    let mut out = frames.clone();
    if let Some(tau) = domain.reverb_tau {
        let weights: Vec<f64> = (0..=domain.reverb_taps)
            .map(|k| (-(k as f64) / tau).exp())
            .collect();
        let denom: f64 = weights.iter().sum();
        for t in 0..frames.rows() {
            let row = out.row_mut(t);
            row.fill(0.0);
            for (k, &w) in weights.iter().enumerate() {
                if k > t {
                    break;
                }
                for (o, &x) in row.iter_mut().zip(frames.row(t - k)) {
                    *o += w * x;
                }
            }
            for o in row.iter_mut() {
                *o /= denom;
            }
        }
    }
    if let Some(snr_db) = domain.noise_snr_db {
        let n = (out.rows() * out.cols()) as f64;
        let signal_power = out.data().iter().map(|&v| v * v).sum::<f64>() / n;
        let noise_power = signal_power / 10f64.powf(snr_db / 10.0);
        let scale = noise_power.sqrt();
        for v in out.data_mut() {
            *v += scale * rng.gaussian();
        }
    }
    Ok(out)
}

/// A generated corpus held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Utterance] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

/// Utterance-id layout: ids are assigned sequentially over
/// (split, domain, index) in declaration order, so ids are globally unique
/// and splits are disjoint by construction.
fn corpus_layout(manifest: &CorpusManifest) -> Vec<(Split, u32, u64)> {
    let mut slots = Vec::new();
    let mut next_id = 0u64;
    for split in Split::ALL {
        for domain in &manifest.domains {
            for _ in 0..manifest.split_count(split) {
                slots.push((split, domain.domain_id, next_id));
                next_id += 1;
            }
        }
    }
    slots
}

/// Generates the full corpus described by `manifest`, fanning utterances out
/// over `threads` workers (the result is identical for any thread count).
pub fn generate_corpus(manifest: &CorpusManifest, threads: usize) -> Result<Corpus, CorpusError> {
    manifest.validate()?;
    let slots = corpus_layout(manifest);
    let utterances = parallel_map(slots.len(), threads, |i| {
        let (_, domain_id, utterance_id) = slots[i];
        let domain = manifest.domain(domain_id).expect("validated");
        generate_utterance(manifest, domain, utterance_id)
    });

    let mut corpus = Corpus {
        manifest: manifest.clone(),
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
    };
    for ((split, _, _), utterance) in slots.into_iter().zip(utterances) {
        match split {
            Split::Train => corpus.train.push(utterance),
            Split::Dev => corpus.dev.push(utterance),
            Split::Test => corpus.test.push(utterance),
        }
    }
    Ok(corpus)
}

#[cfg(test)]
pub(crate) fn test_manifest() -> CorpusManifest {
    CorpusManifest::build(
        6,
        3,
        99,
        vec![
            DomainConfig::clean(0, "Alpha", (2, 4), 0.2, 0.1),
            DomainConfig {
                domain_id: 1,
                name: "Beta".into(),
                duration_range: (2, 3),
                emission_noise_sigma: 0.3,
                mean_shift_sigma: 0.2,
                reverb_tau: Some(2.0),
                reverb_taps: 4,
                noise_snr_db: Some(8.0),
            },
        ],
        SplitCounts {
            train: 6,
            dev: 3,
            test: 3,
        },
    )
}
