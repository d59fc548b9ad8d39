//! Declarative experiment configuration.
//!
//! Config files are flat UTF-8 text, one `section.key = value` per line with
//! `#` comments. A file refines one of the built-in presets (`style3`,
//! `env3`), named on its first directive line; unknown keys are errors.

use thiserror::Error;

use crate::netgraph::{Architecture, NetworkSpec};
use crate::synthcorpus::{CorpusManifest, DomainConfig, Split, SplitCounts};
use crate::trainer::{Stage, TaskMode, TrainConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error("line {0}: expected `key = value`")]
    Malformed(usize),
    #[error("unknown preset `{0}` (available: style3, env3)")]
    UnknownPreset(String),
    #[error("config must start with `preset = style3` or `preset = env3`")]
    MissingPreset,
    #[error("unknown domain `{0}` in this preset")]
    UnknownDomain(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSettings {
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub master_seed: u64,
    pub train_per_domain: usize,
    pub dev_per_domain: usize,
    pub test_per_domain: usize,
    pub domains: Vec<DomainConfig>,
}

impl CorpusSettings {
    pub fn manifest(&self) -> CorpusManifest {
        CorpusManifest::build(
            self.vocab_size,
            self.feature_dim,
            self.master_seed,
            self.domains.clone(),
            SplitCounts {
                train: self.train_per_domain,
                dev: self.dev_per_domain,
                test: self.test_per_domain,
            },
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSettings {
    pub architecture: Architecture,
    pub hidden_dim: usize,
    pub fsmn_blocks: usize,
    pub lookback_order: usize,
    pub lookahead_order: usize,
    pub stride_back: usize,
    pub stride_ahead: usize,
    pub lstm_layers: usize,
    pub lstm_proj_dim: usize,
}

impl NetworkSettings {
    /// Concrete spec for a corpus: the input dimension comes from the
    /// feature pipeline, the output dimension from the vocabulary plus
    /// blank.
    pub fn spec(&self, input_dim: usize, output_dim: usize) -> NetworkSpec {
        NetworkSpec {
            architecture: self.architecture,
            input_dim,
            hidden_dim: self.hidden_dim,
            output_dim,
            fsmn_blocks: self.fsmn_blocks,
            lookback_order: self.lookback_order,
            lookahead_order: self.lookahead_order,
            stride_back: self.stride_back,
            stride_ahead: self.stride_ahead,
            lstm_layers: self.lstm_layers,
            lstm_proj_dim: self.lstm_proj_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSettings {
    pub task_mode: TaskMode,
    pub learning_rate: f64,
    pub lr_halving_threshold: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub clip_bound: f64,
    pub w_hard: f64,
    pub seed: u64,
    pub student_from_scratch: bool,
}

impl TrainingSettings {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            stage: Stage::MultiCondition,
            task_mode: self.task_mode,
            learning_rate: self.learning_rate,
            lr_halving_threshold: self.lr_halving_threshold,
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            clip_bound: self.clip_bound,
            w_hard: self.w_hard,
            shuffle_seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub preset_name: String,
    pub corpus: CorpusSettings,
    pub network: NetworkSettings,
    pub training: TrainingSettings,
    pub eval: EvalSettings,
}

fn base_config(preset_name: &str, domains: Vec<DomainConfig>) -> ExperimentConfig {
    ExperimentConfig {
        preset_name: preset_name.to_string(),
        corpus: CorpusSettings {
            vocab_size: 20,
            feature_dim: 8,
            master_seed: 1,
            train_per_domain: 600,
            dev_per_domain: 60,
            test_per_domain: 100,
            domains,
        },
        network: NetworkSettings {
            architecture: Architecture::Fsmn,
            hidden_dim: 64,
            fsmn_blocks: 4,
            lookback_order: 5,
            lookahead_order: 1,
            stride_back: 2,
            stride_ahead: 1,
            lstm_layers: 2,
            lstm_proj_dim: 32,
        },
        training: TrainingSettings {
            task_mode: TaskMode::FrameCe,
            learning_rate: 0.02,
            lr_halving_threshold: 0.001,
            max_epochs: 30,
            batch_size: 16,
            clip_bound: 1.0,
            w_hard: 0.8,
            seed: 1,
            student_from_scratch: false,
        },
        eval: EvalSettings { split: Split::Test },
    }
}

/// Three speaking-style domains: read, lecture, and spontaneous speech
/// analogs with increasingly loose timing and noisier emissions.
pub fn style3() -> ExperimentConfig {
    let lect = DomainConfig {
        domain_id: 1,
        name: "Lect".into(),
        // Mild temporal smearing stands in for lecture-hall acoustics and
        // keeps the lecture style from being a noisier copy of read speech.
        reverb_tau: Some(2.0),
        reverb_taps: 4,
        ..DomainConfig::clean(1, "Lect", (4, 8), 0.4, 0.3)
    };
    base_config(
        "style3",
        vec![
            DomainConfig::clean(0, "Read", (6, 10), 0.3, 0.0),
            lect,
            DomainConfig::clean(2, "Spon", (3, 6), 0.6, 0.6),
        ],
    )
}

/// Three environment domains over a common speaking style: clean, temporal
/// smearing, and smearing plus additive noise at 5 dB SNR.
pub fn env3() -> ExperimentConfig {
    let near = DomainConfig::clean(0, "Near", (6, 10), 0.3, 0.0);
    let far = DomainConfig {
        domain_id: 1,
        name: "Far".into(),
        reverb_tau: Some(3.0),
        reverb_taps: 6,
        ..near.clone()
    };
    let far_noise = DomainConfig {
        domain_id: 2,
        name: "FarNoise".into(),
        noise_snr_db: Some(5.0),
        ..far.clone()
    };
    base_config("env3", vec![near, far, far_noise])
}

pub fn preset(name: &str) -> Result<ExperimentConfig, ConfigError> {
    match name {
        "style3" => Ok(style3()),
        "env3" => Ok(env3()),
        other => Err(ConfigError::UnknownPreset(other.to_string())),
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        reason: e.to_string(),
    })
}

fn parse_optional_f64(key: &str, value: &str) -> Result<Option<f64>, ConfigError> {
    if value == "none" {
        Ok(None)
    } else {
        parse_value(key, value).map(Some)
    }
}

fn apply_key(config: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    let unknown = || Err(ConfigError::UnknownKey(key.to_string()));
    let bad = |reason: &str| {
        Err(ConfigError::BadValue {
            key: key.to_string(),
            reason: reason.to_string(),
        })
    };
    if let Some(rest) = key.strip_prefix("corpus.domain.") {
        let (domain_name, field) = match rest.split_once('.') {
            Some(pair) => pair,
            None => return unknown(),
        };
        let domain = config
            .corpus
            .domains
            .iter_mut()
            .find(|d| d.name == domain_name)
            .ok_or_else(|| ConfigError::UnknownDomain(domain_name.to_string()))?;
        match field {
            "duration_min" => domain.duration_range.0 = parse_value(key, value)?,
            "duration_max" => domain.duration_range.1 = parse_value(key, value)?,
            "emission_noise_sigma" => domain.emission_noise_sigma = parse_value(key, value)?,
            "mean_shift_sigma" => domain.mean_shift_sigma = parse_value(key, value)?,
            "reverb_tau" => domain.reverb_tau = parse_optional_f64(key, value)?,
            "reverb_taps" => domain.reverb_taps = parse_value(key, value)?,
            "noise_snr_db" => domain.noise_snr_db = parse_optional_f64(key, value)?,
            _ => return unknown(),
        }
        return Ok(());
    }
    match key {
        "corpus.vocab_size" => config.corpus.vocab_size = parse_value(key, value)?,
        "corpus.feature_dim" => config.corpus.feature_dim = parse_value(key, value)?,
        "corpus.master_seed" => config.corpus.master_seed = parse_value(key, value)?,
        "corpus.train_per_domain" => config.corpus.train_per_domain = parse_value(key, value)?,
        "corpus.dev_per_domain" => config.corpus.dev_per_domain = parse_value(key, value)?,
        "corpus.test_per_domain" => config.corpus.test_per_domain = parse_value(key, value)?,
        "network.architecture" => {
            config.network.architecture = match value {
                "fsmn" => Architecture::Fsmn,
                "lstm" => Architecture::Lstm,
                _ => return bad("expected `fsmn` or `lstm`"),
            }
        }
        "network.hidden_dim" => config.network.hidden_dim = parse_value(key, value)?,
        "network.fsmn_blocks" => config.network.fsmn_blocks = parse_value(key, value)?,
        "network.lookback_order" => config.network.lookback_order = parse_value(key, value)?,
        "network.lookahead_order" => config.network.lookahead_order = parse_value(key, value)?,
        "network.stride_back" => config.network.stride_back = parse_value(key, value)?,
        "network.stride_ahead" => config.network.stride_ahead = parse_value(key, value)?,
        "network.lstm_layers" => config.network.lstm_layers = parse_value(key, value)?,
        "network.lstm_proj_dim" => config.network.lstm_proj_dim = parse_value(key, value)?,
        "training.task_mode" => {
            config.training.task_mode = match value {
                "frame_ce" => TaskMode::FrameCe,
                "ctc" => TaskMode::Ctc,
                _ => return bad("expected `frame_ce` or `ctc`"),
            }
        }
        "training.learning_rate" => config.training.learning_rate = parse_value(key, value)?,
        "training.lr_halving_threshold" => {
            config.training.lr_halving_threshold = parse_value(key, value)?
        }
        "training.max_epochs" => config.training.max_epochs = parse_value(key, value)?,
        "training.batch_size" => config.training.batch_size = parse_value(key, value)?,
        "training.clip_bound" => config.training.clip_bound = parse_value(key, value)?,
        "training.w_hard" => config.training.w_hard = parse_value(key, value)?,
        "training.seed" => config.training.seed = parse_value(key, value)?,
        "training.student_from_scratch" => {
            config.training.student_from_scratch = parse_value(key, value)?
        }
        "eval.split" => {
            config.eval.split = match value {
                "train" => Split::Train,
                "dev" => Split::Dev,
                "test" => Split::Test,
                _ => return bad("expected `train`, `dev` or `test`"),
            }
        }
        _ => return unknown(),
    }
    Ok(())
}

/// Parses a config file: a `preset = ...` line first, then overrides.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut config: Option<ExperimentConfig> = None;
    for (idx, raw_line) in text.lines().enumerate() {
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Malformed(idx + 1))?;
        let (key, value) = (key.trim(), value.trim());
        if key == "preset" {
            if config.is_some() {
                return Err(ConfigError::BadValue {
                    key: "preset".into(),
                    reason: "preset may only be set once, before other keys".into(),
                });
            }
            config = Some(preset(value)?);
            continue;
        }
        let target = config.as_mut().ok_or(ConfigError::MissingPreset)?;
        apply_key(target, key, value)?;
    }
    config.ok_or(ConfigError::MissingPreset)
}

impl ExperimentConfig {
    /// Flat `key = value` rendering; parses back to the same config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let push = |out: &mut String, key: &str, value: String| {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        };
        push(&mut out, "preset", self.preset_name.clone());
        push(&mut out, "corpus.vocab_size", self.corpus.vocab_size.to_string());
        push(&mut out, "corpus.feature_dim", self.corpus.feature_dim.to_string());
        push(&mut out, "corpus.master_seed", self.corpus.master_seed.to_string());
        push(
            &mut out,
            "corpus.train_per_domain",
            self.corpus.train_per_domain.to_string(),
        );
        push(
            &mut out,
            "corpus.dev_per_domain",
            self.corpus.dev_per_domain.to_string(),
        );
        push(
            &mut out,
            "corpus.test_per_domain",
            self.corpus.test_per_domain.to_string(),
        );
        for domain in &self.corpus.domains {
            let prefix = format!("corpus.domain.{}", domain.name);
            push(
                &mut out,
                &format!("{prefix}.duration_min"),
                domain.duration_range.0.to_string(),
            );
            push(
                &mut out,
                &format!("{prefix}.duration_max"),
                domain.duration_range.1.to_string(),
            );
            push(
                &mut out,
                &format!("{prefix}.emission_noise_sigma"),
                domain.emission_noise_sigma.to_string(),
            );
            push(
                &mut out,
                &format!("{prefix}.mean_shift_sigma"),
                domain.mean_shift_sigma.to_string(),
            );
            push(
                &mut out,
                &format!("{prefix}.reverb_tau"),
                domain
                    .reverb_tau
                    .map(|v| v.to_string())
                    .unwrap_or_else(|| "none".into()),
            );
            push(
                &mut out,
                &format!("{prefix}.reverb_taps"),
                domain.reverb_taps.to_string(),
            );
            push(
                &mut out,
                &format!("{prefix}.noise_snr_db"),
                domain
                    .noise_snr_db
                    .map(|v| v.to_string())
                    .unwrap_or_else(|| "none".into()),
            );
        }
        push(
            &mut out,
            "network.architecture",
            match self.network.architecture {
                Architecture::Fsmn => "fsmn".into(),
                Architecture::Lstm => "lstm".into(),
            },
        );
        push(&mut out, "network.hidden_dim", self.network.hidden_dim.to_string());
        push(&mut out, "network.fsmn_blocks", self.network.fsmn_blocks.to_string());
        push(
            &mut out,
            "network.lookback_order",
            self.network.lookback_order.to_string(),
        );
        push(
            &mut out,
            "network.lookahead_order",
            self.network.lookahead_order.to_string(),
        );
        push(&mut out, "network.stride_back", self.network.stride_back.to_string());
        push(&mut out, "network.stride_ahead", self.network.stride_ahead.to_string());
        push(&mut out, "network.lstm_layers", self.network.lstm_layers.to_string());
        push(
            &mut out,
            "network.lstm_proj_dim",
            self.network.lstm_proj_dim.to_string(),
        );
        push(
            &mut out,
            "training.task_mode",
            match self.training.task_mode {
                TaskMode::FrameCe => "frame_ce".into(),
                TaskMode::Ctc => "ctc".into(),
            },
        );
        push(
            &mut out,
            "training.learning_rate",
            self.training.learning_rate.to_string(),
        );
        push(
            &mut out,
            "training.lr_halving_threshold",
            self.training.lr_halving_threshold.to_string(),
        );
        push(&mut out, "training.max_epochs", self.training.max_epochs.to_string());
        push(&mut out, "training.batch_size", self.training.batch_size.to_string());
        push(&mut out, "training.clip_bound", self.training.clip_bound.to_string());
        push(&mut out, "training.w_hard", self.training.w_hard.to_string());
        push(&mut out, "training.seed", self.training.seed.to_string());
        push(
            &mut out,
            "training.student_from_scratch",
            self.training.student_from_scratch.to_string(),
        );
        push(&mut out, "eval.split", self.eval.split.name().to_string());
        out
    }
}
