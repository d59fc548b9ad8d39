//! Three-stage training pipeline: multi-condition baseline over pooled
//! domains, per-domain teacher fine-tuning, and student training against
//! domain-routed soft targets, plus the clipped-SGD optimizer, the
//! dev-driven learning-rate schedule, and metrics/checkpoint management.

mod metrics;

pub use metrics::{MetricRow, MetricsLog, METRICS_HEADER};

use std::path::Path;

use thiserror::Error;

use crate::losses::{
    ctc_loss, ctc_mixed_loss, ensemble_posterior, hard_ce, interpolate_targets, mean_entropy,
    soft_target_ce, LossError, LossResult, PosteriorSeq, TargetDistribution,
};
use crate::netgraph::{
    backward, forward, init_params, save_checkpoint, CheckpointError, ModelParams, NetError,
    NetworkSpec,
};
use crate::numcore::RngStream;
use crate::parallel::{parallel_map, worker_threads};
use crate::synthcorpus::{
    apply_mvn, feature_pipeline, fit_global_mvn, Corpus, CorpusError, CorpusManifest, MvnStats,
    ProcessedUtterance,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged (non-finite loss) in stage {stage}, epoch {epoch}, batch {batch}")]
    Diverged {
        stage: String,
        epoch: usize,
        batch: usize,
    },
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("unrouted domain {0}: no teacher with that domain id")]
    UnroutedDomain(u32),
    #[error("teacher bank is invalid: {0}")]
    InvalidTeacherBank(String),
    #[error("domain {0} has no utterances in this corpus")]
    EmptyDomainSubset(u32),
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    MultiCondition,
    FineTune(u32),
    Student,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskMode {
    FrameCe,
    Ctc,
}

/// Per-stage optimizer and schedule settings.
#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub stage: Stage,
    pub task_mode: TaskMode,
    pub learning_rate: f64,
    /// Absolute dev frame-accuracy gain below which the rate is halved.
    pub lr_halving_threshold: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub clip_bound: f64,
    pub w_hard: f64,
    pub shuffle_seed: u64,
}

impl TrainConfig {
    /// Schedule defaults: rate 0.02 halved on dev stagnation (threshold
    /// 0.001 absolute), stop after two barren halvings, at most 30 epochs,
    /// batches of 16 utterances, gradients clipped to [-1, 1], w_hard 0.8.
    pub fn defaults(stage: Stage, task_mode: TaskMode, shuffle_seed: u64) -> TrainConfig {
        TrainConfig {
            stage,
            task_mode,
            learning_rate: 0.02,
            lr_halving_threshold: 0.001,
            max_epochs: 30,
            batch_size: 16,
            clip_bound: 1.0,
            w_hard: 0.8,
            shuffle_seed,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(TrainError::BadConfig("learning_rate must be >= 0".into()));
        }
        if !self.clip_bound.is_finite() || self.clip_bound <= 0.0 {
            return Err(TrainError::BadConfig("clip_bound must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.w_hard) {
            return Err(TrainError::BadConfig("w_hard must lie in [0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Ordered collection of frozen teacher models keyed by domain id, plus
/// ensemble weights (uniform unless stated).
pub struct TeacherBank {
    teachers: Vec<(u32, NetworkSpec, ModelParams)>,
    weights: Vec<f64>,
}

impl TeacherBank {
    pub fn new(teachers: Vec<(u32, NetworkSpec, ModelParams)>) -> Result<TeacherBank, TrainError> {
        let n = teachers.len();
        if n == 0 {
            return Err(TrainError::InvalidTeacherBank("no teachers".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (domain_id, _, _) in &teachers {
            if !seen.insert(*domain_id) {
                return Err(TrainError::InvalidTeacherBank(format!(
                    "duplicate teacher for domain {domain_id}"
                )));
            }
        }
        Ok(TeacherBank {
            teachers,
            weights: vec![1.0 / n as f64; n],
        })
    }

    pub fn teachers(&self) -> &[(u32, NetworkSpec, ModelParams)] {
        &self.teachers
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn teacher(&self, domain_id: u32) -> Option<(&NetworkSpec, &ModelParams)> {
        self.teachers
            .iter()
            .find(|(d, _, _)| *d == domain_id)
            .map(|(_, spec, params)| (spec, params))
    }

    /// Every domain id present in `utterances` must have a teacher.
    pub fn check_coverage(&self, utterances: &[ProcessedUtterance]) -> Result<(), TrainError> {
        for utt in utterances {
            if self.teacher(utt.domain_id).is_none() {
                return Err(TrainError::UnroutedDomain(utt.domain_id));
            }
        }
        Ok(())
    }
}

/// How training targets are produced for each sample.
pub enum TargetProvider<'a> {
    /// One-hot rows from the frame labels.
    HardOnly,
    /// Run only the teacher matching the sample's domain, then interpolate
    /// its posterior with the hard labels.
    DomainRouted { bank: &'a TeacherBank, w_hard: f64 },
    /// Run every teacher, average the posteriors with the bank weights,
    /// then interpolate. The comparison baseline routing argues against.
    EnsembleDistilled { bank: &'a TeacherBank, w_hard: f64 },
}

/// Targets for one sample plus the routing decision (the teacher's domain id
/// when exactly one teacher was consulted).
pub struct ProvidedTargets {
    pub targets: TargetDistribution,
    pub routed_teacher: Option<u32>,
}

/// Soft posterior for one sample, before any interpolation with hard labels.
/// `None` for the hard-only provider.
fn provider_posterior(
    provider: &TargetProvider,
    utt: &ProcessedUtterance,
) -> Result<Option<(PosteriorSeq, Option<u32>)>, TrainError> {
    match provider {
        TargetProvider::HardOnly => Ok(None),
        TargetProvider::DomainRouted { bank, .. } => {
            let (spec, params) = bank
                .teacher(utt.domain_id)
                .ok_or(TrainError::UnroutedDomain(utt.domain_id))?;
            let (logits, _) = forward(params, spec, &utt.view.frames)?;
            Ok(Some((
                PosteriorSeq::from_logits(&logits)?,
                Some(utt.domain_id),
            )))
        }
        TargetProvider::EnsembleDistilled { bank, .. } => {
            let mut posteriors = Vec::with_capacity(bank.teachers.len());
            for (_, spec, params) in &bank.teachers {
                let (logits, _) = forward(params, spec, &utt.view.frames)?;
                posteriors.push(PosteriorSeq::from_logits(&logits)?);
            }
            Ok(Some((
                ensemble_posterior(&posteriors, &bank.weights)?,
                None,
            )))
        }
    }
}

/// Builds the per-frame target distribution for one sample.
pub fn make_targets(
    provider: &TargetProvider,
    utt: &ProcessedUtterance,
    num_labels: usize,
) -> Result<ProvidedTargets, TrainError> {
    match provider_posterior(provider, utt)? {
        None => Ok(ProvidedTargets {
            targets: TargetDistribution::one_hot(&utt.view.frame_labels, num_labels)?,
            routed_teacher: None,
        }),
        Some((posterior, routed_teacher)) => {
            let w_hard = match provider {
                TargetProvider::DomainRouted { w_hard, .. }
                | TargetProvider::EnsembleDistilled { w_hard, .. } => *w_hard,
                TargetProvider::HardOnly => unreachable!(),
            };
            Ok(ProvidedTargets {
                targets: interpolate_targets(&posterior, &utt.view.frame_labels, w_hard)?,
                routed_teacher,
            })
        }
    }
}

/// Clipped SGD update: every gradient entry is clamped elementwise to
/// `[-clip_bound, +clip_bound]`, then `theta <- theta - lr * g`.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    learning_rate: f64,
    clip_bound: f64,
) -> Result<(), TrainError> {
    if !params.same_layout(grads) {
        return Err(TrainError::BadConfig(
            "gradient layout does not match parameters".into(),
        ));
    }
    for (p_entry, g_entry) in params.entries_mut().iter_mut().zip(grads.entries()) {
        for (p, &g) in p_entry.value.data_mut().iter_mut().zip(g_entry.value.data()) {
            if !g.is_finite() {
                return Err(TrainError::NonFiniteGradient);
            }
            let clipped = g.clamp(-clip_bound, clip_bound);
            debug_assert!((-clip_bound..=clip_bound).contains(&clipped));
            *p -= learning_rate * clipped;
        }
    }
    Ok(())
}

/// A corpus run through the feature pipeline with one global normalization
/// fitted on the training split and applied to every split.
pub struct PreparedCorpus {
    pub manifest: CorpusManifest,
    pub train: Vec<ProcessedUtterance>,
    pub dev: Vec<ProcessedUtterance>,
    pub test: Vec<ProcessedUtterance>,
    pub mvn: MvnStats,
}

impl PreparedCorpus {
    pub fn prepare(corpus: &Corpus) -> Result<PreparedCorpus, TrainError> {
        let threads = worker_threads();
        let process = |utts: &[crate::synthcorpus::Utterance]| -> Vec<ProcessedUtterance> {
            parallel_map(utts.len(), threads, |i| feature_pipeline(&utts[i]))
        };
        let train = process(&corpus.train);
        let dev = process(&corpus.dev);
        let test = process(&corpus.test);
        let mvn = fit_global_mvn(train.iter().map(|p| &p.view))?;
        let normalize = |utts: Vec<ProcessedUtterance>| -> Vec<ProcessedUtterance> {
            parallel_map(utts.len(), threads, |i| {
                let mut utt = utts[i].clone();
                utt.view = apply_mvn(&utt.view, &mvn);
                utt
            })
        };
        Ok(PreparedCorpus {
            manifest: corpus.manifest.clone(),
            train: normalize(train),
            dev: normalize(dev),
            test: normalize(test),
            mvn,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.train
            .first()
            .map(|u| u.view.frames.cols())
            .unwrap_or(0)
    }

    pub fn num_labels(&self) -> usize {
        self.manifest.num_labels()
    }

    pub fn domains(&self) -> Vec<(u32, String)> {
        self.manifest
            .domains
            .iter()
            .map(|d| (d.domain_id, d.name.clone()))
            .collect()
    }

    /// The same corpus restricted to one domain (fine-tuning subsets).
    pub fn restrict_to_domain(&self, domain_id: u32) -> Result<PreparedCorpus, TrainError> {
        let filter = |utts: &[ProcessedUtterance]| -> Vec<ProcessedUtterance> {
            utts.iter()
                .filter(|u| u.domain_id == domain_id)
                .cloned()
                .collect()
        };
        let train = filter(&self.train);
        if train.is_empty() {
            return Err(TrainError::EmptyDomainSubset(domain_id));
        }
        let mut manifest = self.manifest.clone();
        manifest.domains.retain(|d| d.domain_id == domain_id);
        Ok(PreparedCorpus {
            manifest,
            train,
            dev: filter(&self.dev),
            test: filter(&self.test),
            mvn: self.mvn.clone(),
        })
    }
}

/// Result of one training stage.
pub struct StageOutput {
    pub params: ModelParams,
    /// `(utterance_id, teacher domain_id)` per routed training sample, in
    /// visit order.
    pub routing_trace: Vec<(u64, u32)>,
}

struct SampleLoss {
    result: LossResult,
    routed_teacher: Option<u32>,
    /// Mean per-frame entropy of the training targets; the cross-entropy
    /// loss minus this is the true KL divergence, logged alongside it.
    target_entropy: Option<f64>,
}

fn compute_loss(
    config: &TrainConfig,
    provider: &TargetProvider,
    utt: &ProcessedUtterance,
    logits: &crate::numcore::Matrix,
) -> Result<SampleLoss, TrainError> {
    match config.task_mode {
        TaskMode::FrameCe => {
            let provided = make_targets(provider, utt, logits.cols())?;
            let result = soft_target_ce(&provided.targets, logits)?;
            Ok(SampleLoss {
                target_entropy: Some(mean_entropy(provided.targets.rows())),
                result,
                routed_teacher: provided.routed_teacher,
            })
        }
        TaskMode::Ctc => match provider_posterior(provider, utt)? {
            None => Ok(SampleLoss {
                result: ctc_loss(logits, &utt.tokens)?,
                routed_teacher: None,
                target_entropy: None,
            }),
            Some((posterior, routed)) => {
                let w_hard = match provider {
                    TargetProvider::DomainRouted { w_hard, .. }
                    | TargetProvider::EnsembleDistilled { w_hard, .. } => *w_hard,
                    TargetProvider::HardOnly => unreachable!(),
                };
                let result = ctc_mixed_loss(logits, &posterior, &utt.tokens, w_hard)?;
                Ok(SampleLoss {
                    result,
                    routed_teacher: routed,
                    target_entropy: None,
                })
            }
        },
    }
}

struct DevScores {
    per_domain: Vec<(String, f64, f64)>,
    overall_loss: f64,
    overall_acc: f64,
}

fn evaluate_dev(
    params: &ModelParams,
    spec: &NetworkSpec,
    corpus: &PreparedCorpus,
    threads: usize,
) -> Result<DevScores, TrainError> {
    // Per-utterance forward once; aggregate in fixed order.
    let scored = parallel_map(corpus.dev.len(), threads, |i| {
        let utt = &corpus.dev[i];
        let (logits, _) = forward(params, spec, &utt.view.frames)?;
        let loss = hard_ce(&utt.view.frame_labels, &logits)?.loss;
        let correct = utt
            .view
            .frame_labels
            .iter()
            .enumerate()
            .filter(|(t, &label)| crate::losses::argmax_row(logits.row(*t)) == label)
            .count();
        Ok::<_, TrainError>((utt.domain_id, loss, correct, utt.view.frame_labels.len()))
    });
    let mut per_domain_raw: Vec<(u32, f64, usize, usize, usize)> = corpus
        .manifest
        .domains
        .iter()
        .map(|d| (d.domain_id, 0.0, 0usize, 0usize, 0usize))
        .collect();
    for item in scored {
        let (domain_id, loss, correct, frames) = item?;
        let slot = per_domain_raw
            .iter_mut()
            .find(|(d, ..)| *d == domain_id)
            .expect("domain known");
        slot.1 += loss;
        slot.2 += 1;
        slot.3 += correct;
        slot.4 += frames;
    }
    let mut per_domain = Vec::new();
    let (mut loss_sum, mut utt_count, mut correct_sum, mut frame_sum) = (0.0, 0usize, 0usize, 0usize);
    for (domain_id, loss, utts, correct, frames) in per_domain_raw {
        let name = corpus
            .manifest
            .domain(domain_id)
            .expect("domain known")
            .name
            .clone();
        if utts > 0 {
            per_domain.push((name, loss / utts as f64, correct as f64 / frames as f64));
        }
        loss_sum += loss;
        utt_count += utts;
        correct_sum += correct;
        frame_sum += frames;
    }
    Ok(DevScores {
        per_domain,
        overall_loss: loss_sum / utt_count.max(1) as f64,
        overall_acc: correct_sum as f64 / frame_sum.max(1) as f64,
    })
}

/// Runs one training stage: per epoch, shuffle the pooled training set with
/// `(shuffle_seed, epoch)`, take minibatches (which may mix domains), and
/// for each sample run forward, build targets, compute the loss, run
/// backward, and apply one clipped SGD step per minibatch. After each epoch
/// the dev split is scored per domain and overall; the rate is halved when
/// the overall dev frame-accuracy gain falls below the threshold and
/// training stops after two consecutive barren halvings or `max_epochs`.
/// Returns the parameters with the best overall dev frame accuracy (the
/// initial parameters count as a candidate).
pub fn train_stage(
    config: &TrainConfig,
    corpus: &PreparedCorpus,
    spec: &NetworkSpec,
    initial: ModelParams,
    provider: &TargetProvider,
    stage_label: &str,
    metrics: &mut MetricsLog,
) -> Result<StageOutput, TrainError> {
    config.validate()?;
    if let TargetProvider::DomainRouted { bank, .. } = provider {
        bank.check_coverage(&corpus.train)?;
    }
    let threads = worker_threads();
    let n = corpus.train.len();
    let mut params = initial;
    let mut best_params = params.clone();
    // The initial parameters count as a best-candidate (a stage that never
    // improves on its starting point returns it unchanged).
    let mut best_acc = if corpus.dev.is_empty() {
        f64::NEG_INFINITY
    } else {
        evaluate_dev(&params, spec, corpus, threads)?.overall_acc
    };
    let mut prev_acc = best_acc;
    let mut lr = config.learning_rate;
    let mut barren_halvings = 0usize;
    let mut routing_trace = Vec::new();

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        RngStream::new(config.shuffle_seed, epoch as u64).shuffle(&mut order);

        let mut epoch_loss = 0.0;
        let mut epoch_entropy = 0.0;
        let mut entropy_samples = 0usize;
        let mut train_correct = 0usize;
        let mut train_frames = 0usize;
        for (batch_index, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grad_accum = ModelParams::zeros(spec);
            let batch_scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                let utt = &corpus.train[idx];
                let (logits, cache) = forward(&params, spec, &utt.view.frames)?;
                for (t, &label) in utt.view.frame_labels.iter().enumerate() {
                    if crate::losses::argmax_row(logits.row(t)) == label {
                        train_correct += 1;
                    }
                }
                train_frames += utt.view.frame_labels.len();
                let sample = compute_loss(config, provider, utt, &logits)?;
                if !sample.result.loss.is_finite() {
                    return Err(TrainError::Diverged {
                        stage: stage_label.to_string(),
                        epoch,
                        batch: batch_index,
                    });
                }
                if let Some(teacher) = sample.routed_teacher {
                    routing_trace.push((utt.utterance_id, teacher));
                }
                if let Some(entropy) = sample.target_entropy {
                    epoch_entropy += entropy;
                    entropy_samples += 1;
                }
                epoch_loss += sample.result.loss;
                let grads = backward(&params, spec, &cache, &sample.result.dlogits)?;
                for (acc, g) in grad_accum.entries_mut().iter_mut().zip(grads.entries()) {
                    acc.value.axpy(batch_scale, &g.value);
                }
            }
            sgd_step(&mut params, &grad_accum, lr, config.clip_bound)?;
        }

        let dev = evaluate_dev(&params, spec, corpus, threads)?;
        let mean_loss = epoch_loss / n.max(1) as f64;
        // The loss is cross-entropy against (possibly soft) targets; for
        // frame-level targets the KL divergence is that minus the mean
        // target entropy. Both are reported on the progress log.
        if entropy_samples > 0 {
            let kld = mean_loss - epoch_entropy / entropy_samples as f64;
            eprintln!(
                "[{stage_label}] epoch {epoch}: train_ce={mean_loss:.6} train_kld={kld:.6} \
                 dev_acc={:.4} lr={lr}",
                dev.overall_acc
            );
        } else {
            eprintln!(
                "[{stage_label}] epoch {epoch}: train_loss={mean_loss:.6} dev_acc={:.4} lr={lr}",
                dev.overall_acc
            );
        }
        metrics.push(MetricRow {
            stage: stage_label.to_string(),
            epoch,
            split: "train".into(),
            domain: "all".into(),
            loss: mean_loss,
            frame_acc: train_correct as f64 / train_frames.max(1) as f64,
            lr,
        })?;
        for (domain, loss, acc) in &dev.per_domain {
            metrics.push(MetricRow {
                stage: stage_label.to_string(),
                epoch,
                split: "dev".into(),
                domain: domain.clone(),
                loss: *loss,
                frame_acc: *acc,
                lr,
            })?;
        }
        metrics.push(MetricRow {
            stage: stage_label.to_string(),
            epoch,
            split: "dev".into(),
            domain: "all".into(),
            loss: dev.overall_loss,
            frame_acc: dev.overall_acc,
            lr,
        })?;

        if dev.overall_acc > best_acc {
            best_acc = dev.overall_acc;
            best_params = params.clone();
        }
        // Epoch-over-epoch gain drives the schedule (newbob style); the
        // best-so-far accuracy only selects the returned parameters.
        let gain = dev.overall_acc - prev_acc;
        prev_acc = dev.overall_acc;
        if gain < config.lr_halving_threshold {
            lr *= 0.5;
            if gain <= 0.0 {
                barren_halvings += 1;
            } else {
                barren_halvings = 0;
            }
            if barren_halvings >= 2 {
                break;
            }
        } else {
            barren_halvings = 0;
        }
    }

    Ok(StageOutput {
        params: best_params,
        routing_trace,
    })
}

/// Produces a domain teacher by fine-tuning the multi-condition model on a
/// single domain's data.
///
/// Fine-tuning keeps the stage-1 initial rate: a domain subset here is a few
/// hundred short utterances, and anything slower cannot move the model off
/// its starting point before the stagnation schedule ends the stage.
pub fn fine_tune(
    base: &ModelParams,
    spec: &NetworkSpec,
    config: &TrainConfig,
    corpus: &PreparedCorpus,
    domain_id: u32,
    stage_label: &str,
    metrics: &mut MetricsLog,
) -> Result<StageOutput, TrainError> {
    let subset = corpus.restrict_to_domain(domain_id)?;
    let ft_config = TrainConfig {
        stage: Stage::FineTune(domain_id),
        ..*config
    };
    train_stage(
        &ft_config,
        &subset,
        spec,
        base.clone(),
        &TargetProvider::HardOnly,
        stage_label,
        metrics,
    )
}

/// Everything the three-stage pipeline needs on top of a prepared corpus.
pub struct PipelineConfig {
    pub spec: NetworkSpec,
    pub train: TrainConfig,
    pub seed: u64,
    /// Initialize the student from scratch instead of from the
    /// multi-condition model.
    pub student_from_scratch: bool,
}

pub struct PipelineOutput {
    pub spec: NetworkSpec,
    pub baseline: ModelParams,
    pub teacher_bank: TeacherBank,
    pub student: ModelParams,
    pub routing_trace: Vec<(u64, u32)>,
}

const INIT_STREAM: u64 = 7001;
const STAGE_SHUFFLE_STREAM: u64 = 7100;

/// Stage ordinal used by [`stage_shuffle_seed`] for the student stage.
pub const STUDENT_STAGE_ORDINAL: u64 = 101;

/// Per-stage shuffle seed derived from the experiment seed. Ordinals:
/// 0 = multi-condition, 1 + i = teacher for the i-th domain,
/// [`STUDENT_STAGE_ORDINAL`] = student. Staged CLI runs and `run_pipeline`
/// agree bit-for-bit because both derive seeds through this function.
pub fn stage_shuffle_seed(seed: u64, ordinal: u64) -> u64 {
    RngStream::new(seed, STAGE_SHUFFLE_STREAM + ordinal).next_u64()
}

/// Seeded initial parameters for stage 1 (shared by staged CLI runs).
pub fn initial_params(spec: &NetworkSpec, seed: u64) -> ModelParams {
    init_params(spec, &mut RngStream::new(seed, INIT_STREAM))
}

/// Runs the full three-step pipeline; when `out_dir` is given, checkpoints
/// (`baseline.mdst`, `teacher_<domain>.mdst`, `student.mdst`) are written as
/// each stage completes.
pub fn run_pipeline(
    config: &PipelineConfig,
    corpus: &PreparedCorpus,
    out_dir: Option<&Path>,
    metrics: &mut MetricsLog,
) -> Result<PipelineOutput, TrainError> {
    let spec = config.spec.clone();
    spec.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    // Step 1: multi-condition model over the pooled set.
    let initial = initial_params(&spec, config.seed);
    let stage1_config = TrainConfig {
        stage: Stage::MultiCondition,
        shuffle_seed: stage_shuffle_seed(config.seed, 0),
        ..config.train
    };
    let baseline = train_stage(
        &stage1_config,
        corpus,
        &spec,
        initial.clone(),
        &TargetProvider::HardOnly,
        "baseline",
        metrics,
    )?
    .params;
    if let Some(dir) = out_dir {
        save_checkpoint(&baseline, &spec, dir.join("baseline.mdst"))?;
    }

    // Step 2: one teacher per domain, fine-tuned from the baseline.
    let mut teachers = Vec::new();
    for (ordinal, domain) in corpus.manifest.domains.iter().enumerate() {
        let label = format!("teacher_{}", domain.name);
        let ft_config = TrainConfig {
            shuffle_seed: stage_shuffle_seed(config.seed, 1 + ordinal as u64),
            ..config.train
        };
        let teacher = fine_tune(
            &baseline,
            &spec,
            &ft_config,
            corpus,
            domain.domain_id,
            &label,
            metrics,
        )?
        .params;
        if let Some(dir) = out_dir {
            save_checkpoint(&teacher, &spec, dir.join(format!("teacher_{}.mdst", domain.name)))?;
        }
        teachers.push((domain.domain_id, spec.clone(), teacher));
    }
    let teacher_bank = TeacherBank::new(teachers)?;

    // Step 3: the student learns from its domain's teacher on every sample,
    // starting from the multi-condition model.
    let student_initial = if config.student_from_scratch {
        init_params(&spec, &mut RngStream::new(config.seed, INIT_STREAM + 1))
    } else {
        baseline.clone()
    };
    let stage3_config = TrainConfig {
        stage: Stage::Student,
        shuffle_seed: stage_shuffle_seed(config.seed, STUDENT_STAGE_ORDINAL),
        ..config.train
    };
    let provider = TargetProvider::DomainRouted {
        bank: &teacher_bank,
        w_hard: config.train.w_hard,
    };
    let student_output = train_stage(
        &stage3_config,
        corpus,
        &spec,
        student_initial,
        &provider,
        "student",
        metrics,
    )?;
    if let Some(dir) = out_dir {
        save_checkpoint(&student_output.params, &spec, dir.join("student.mdst"))?;
    }

    Ok(PipelineOutput {
        spec,
        baseline,
        teacher_bank,
        student: student_output.params,
        routing_trace: student_output.routing_trace,
    })
}
