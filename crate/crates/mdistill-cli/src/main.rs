//! Command-line pipeline: corpus generation, staged training, evaluation,
//! and report rendering, driven by a preset or a flat config file.
//!
//! Exit codes: 0 success, 2 config error, 3 I/O error, 4 missing
//! prerequisite, 5 training divergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mdistill::config::{parse_config, preset, ConfigError, ExperimentConfig};
use mdistill::eval::{build_report, evaluate_per_domain, export_curves, EvalResult};
use mdistill::netgraph::load_checkpoint;
use mdistill::parallel::worker_threads;
use mdistill::synthcorpus::{generate_corpus, read_corpus, write_corpus, CorpusError};
use mdistill::trainer::{
    fine_tune, initial_params, stage_shuffle_seed, train_stage, MetricsLog, PreparedCorpus, Stage,
    TargetProvider, TaskMode, TeacherBank, TrainConfig, TrainError, STUDENT_STAGE_ORDINAL,
};

#[derive(Parser)]
#[command(name = "mdistill", version, about = "Multi-domain teacher-student training laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StageArg {
    Baseline,
    Teachers,
    Student,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskModeArg {
    FrameCe,
    Ctc,
}

impl From<TaskModeArg> for TaskMode {
    fn from(value: TaskModeArg) -> TaskMode {
        match value {
            TaskModeArg::FrameCe => TaskMode::FrameCe,
            TaskModeArg::Ctc => TaskMode::Ctc,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and write it to a directory.
    GenData {
        /// Config file (flat `section.key = value`, starting with a preset).
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// Built-in preset name (`style3` or `env3`).
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one stage of the pipeline.
    Train {
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum)]
        stage: StageArg,
        #[arg(long)]
        out: PathBuf,
        /// Print the resolved config and exit without writing anything.
        #[arg(long)]
        dry_run: bool,
    },
    /// Score every checkpoint in a models directory on the test split.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "frame-ce")]
        task_mode: TaskModeArg,
    },
    /// Re-render the report grid from `report.csv` in a directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    Config(String),
    Io(String),
    Dependency(String),
    Divergence(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Dependency(_) => 4,
            CliError::Divergence(_) => 5,
            CliError::Internal(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m)
            | CliError::Io(m)
            | CliError::Dependency(m)
            | CliError::Divergence(m)
            | CliError::Internal(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> CliError {
        CliError::Config(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> CliError {
        match e {
            CorpusError::InvalidDomain { .. } | CorpusError::InvalidManifest(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> CliError {
        match e {
            TrainError::Diverged { .. } => CliError::Divergence(e.to_string()),
            TrainError::BadConfig(_) => CliError::Config(e.to_string()),
            TrainError::Io(io) => CliError::Io(io.to_string()),
            TrainError::Corpus(c) => CliError::from(c),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData {
            config,
            preset,
            out,
        } => gen_data(resolve_config(config, preset)?, &out),
        Command::Train {
            config,
            preset,
            corpus,
            stage,
            out,
            dry_run,
        } => {
            let config = resolve_config(config, preset)?;
            if dry_run {
                print!("{}", config.to_text());
                return Ok(());
            }
            train(&config, &corpus, stage, &out)
        }
        Command::Eval {
            corpus,
            models,
            out,
            task_mode,
        } => eval(&corpus, &models, &out, task_mode.into()),
        Command::Report { out } => report(&out),
    }
}

fn resolve_config(
    config: Option<PathBuf>,
    preset_name: Option<String>,
) -> Result<ExperimentConfig, CliError> {
    match (config, preset_name) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
            Ok(parse_config(&text)?)
        }
        (None, Some(name)) => Ok(preset(&name)?),
        (None, None) | (Some(_), Some(_)) => Err(CliError::Config(
            "exactly one of --config or --preset is required".into(),
        )),
    }
}

fn gen_data(config: ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let manifest = config.corpus.manifest();
    let corpus = generate_corpus(&manifest, worker_threads())?;
    write_corpus(&corpus, out)?;
    println!(
        "wrote corpus `{}`: {} domains, {}/{}/{} utterances per domain",
        out.display(),
        manifest.domains.len(),
        manifest.splits.train,
        manifest.splits.dev,
        manifest.splits.test
    );
    Ok(())
}

/// Replaces all rows of the given stages in `metrics.csv` (so re-running a
/// stage overwrites its own rows deterministically) and appends the new ones.
fn merge_metrics(out_dir: &Path, replaced: &[String], new_rows: MetricsLog) -> Result<(), CliError> {
    let path = out_dir.join("metrics.csv");
    let mut merged = MetricsLog::in_memory();
    if path.exists() {
        let text = std::fs::read_to_string(&path)?;
        let existing = MetricsLog::parse_csv(&text)?;
        for row in existing.rows() {
            if !replaced.contains(&row.stage) {
                merged.push(row.clone())?;
            }
        }
    }
    for row in new_rows.rows() {
        merged.push(row.clone())?;
    }
    merged.write_csv(path)?;
    Ok(())
}

fn require_checkpoint(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Dependency(format!(
            "missing checkpoint {}",
            path.display()
        )))
    }
}

fn train(
    config: &ExperimentConfig,
    corpus_dir: &Path,
    stage: StageArg,
    out: &Path,
) -> Result<(), CliError> {
    let corpus = read_corpus(corpus_dir)?;
    let prepared = PreparedCorpus::prepare(&corpus)?;
    let spec = config
        .network
        .spec(prepared.input_dim(), prepared.num_labels());
    let base = config.training.train_config();
    let seed = config.training.seed;
    std::fs::create_dir_all(out)?;

    match stage {
        StageArg::Baseline => {
            let cfg = TrainConfig {
                stage: Stage::MultiCondition,
                shuffle_seed: stage_shuffle_seed(seed, 0),
                ..base
            };
            let mut metrics = MetricsLog::in_memory();
            let result = train_stage(
                &cfg,
                &prepared,
                &spec,
                initial_params(&spec, seed),
                &TargetProvider::HardOnly,
                "baseline",
                &mut metrics,
            )?;
            mdistill::netgraph::save_checkpoint(&result.params, &spec, out.join("baseline.mdst"))
                .map_err(|e| CliError::Io(e.to_string()))?;
            merge_metrics(out, &["baseline".to_string()], metrics)?;
            println!("wrote {}", out.join("baseline.mdst").display());
        }
        StageArg::Teachers => {
            let baseline_path = out.join("baseline.mdst");
            require_checkpoint(&baseline_path)?;
            let (baseline, ckpt_spec) =
                load_checkpoint(&baseline_path).map_err(|e| CliError::Io(e.to_string()))?;
            check_spec(&ckpt_spec, &spec)?;
            let mut metrics = MetricsLog::in_memory();
            let mut replaced = Vec::new();
            for (ordinal, (domain_id, name)) in prepared.domains().into_iter().enumerate() {
                let label = format!("teacher_{name}");
                let cfg = TrainConfig {
                    shuffle_seed: stage_shuffle_seed(seed, 1 + ordinal as u64),
                    ..base
                };
                let teacher =
                    fine_tune(&baseline, &spec, &cfg, &prepared, domain_id, &label, &mut metrics)?;
                let path = out.join(format!("teacher_{name}.mdst"));
                mdistill::netgraph::save_checkpoint(&teacher.params, &spec, &path)
                    .map_err(|e| CliError::Io(e.to_string()))?;
                println!("wrote {}", path.display());
                replaced.push(label);
            }
            merge_metrics(out, &replaced, metrics)?;
        }
        StageArg::Student => {
            let baseline_path = out.join("baseline.mdst");
            require_checkpoint(&baseline_path)?;
            let mut teacher_list = Vec::new();
            for (domain_id, name) in prepared.domains() {
                let path = out.join(format!("teacher_{name}.mdst"));
                require_checkpoint(&path)?;
                let (params, ckpt_spec) =
                    load_checkpoint(&path).map_err(|e| CliError::Io(e.to_string()))?;
                check_spec(&ckpt_spec, &spec)?;
                teacher_list.push((domain_id, ckpt_spec, params));
            }
            let (baseline, ckpt_spec) =
                load_checkpoint(&baseline_path).map_err(|e| CliError::Io(e.to_string()))?;
            check_spec(&ckpt_spec, &spec)?;
            let bank = TeacherBank::new(teacher_list)?;
            let initial = if config.training.student_from_scratch {
                initial_params(&spec, seed.wrapping_add(1))
            } else {
                baseline
            };
            let cfg = TrainConfig {
                stage: Stage::Student,
                shuffle_seed: stage_shuffle_seed(seed, STUDENT_STAGE_ORDINAL),
                ..base
            };
            let provider = TargetProvider::DomainRouted {
                bank: &bank,
                w_hard: base.w_hard,
            };
            let mut metrics = MetricsLog::in_memory();
            let result = train_stage(
                &cfg, &prepared, &spec, initial, &provider, "student", &mut metrics,
            )?;
            mdistill::netgraph::save_checkpoint(&result.params, &spec, out.join("student.mdst"))
                .map_err(|e| CliError::Io(e.to_string()))?;
            merge_metrics(out, &["student".to_string()], metrics)?;
            println!("wrote {}", out.join("student.mdst").display());
        }
    }
    Ok(())
}

fn check_spec(
    checkpoint: &mdistill::netgraph::NetworkSpec,
    config: &mdistill::netgraph::NetworkSpec,
) -> Result<(), CliError> {
    if checkpoint != config {
        return Err(CliError::Config(
            "checkpoint network spec does not match the config".into(),
        ));
    }
    Ok(())
}

fn eval(corpus_dir: &Path, models_dir: &Path, out: &Path, task_mode: TaskMode) -> Result<(), CliError> {
    let corpus = read_corpus(corpus_dir)?;
    let prepared = PreparedCorpus::prepare(&corpus)?;
    std::fs::create_dir_all(out)?;

    let mut model_files: Vec<PathBuf> = std::fs::read_dir(models_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|ext| ext == "mdst"))
        .collect();
    model_files.sort();
    if model_files.is_empty() {
        return Err(CliError::Dependency(format!(
            "no .mdst checkpoints in {}",
            models_dir.display()
        )));
    }

    let domains = prepared.domains();
    let threads = worker_threads();
    let mut results: Vec<EvalResult> = Vec::new();
    for path in &model_files {
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("model")
            .to_string();
        let (params, spec) = load_checkpoint(path).map_err(|e| CliError::Io(e.to_string()))?;
        let rows = evaluate_per_domain(
            &name,
            &params,
            &spec,
            &domains,
            &prepared.test,
            "test",
            task_mode,
            threads,
        )
        .map_err(|e| CliError::Internal(e.to_string()))?;
        results.extend(rows);
    }

    let grid = build_report(&results, "baseline")
        .map_err(|e| CliError::Dependency(e.to_string()))?;
    print!("{}", grid.render_text());
    std::fs::write(out.join("report.csv"), grid.to_csv())?;

    let metrics_path = models_dir.join("metrics.csv");
    if !metrics_path.exists() {
        return Err(CliError::Dependency(format!(
            "missing metrics log {}",
            metrics_path.display()
        )));
    }
    let metrics = MetricsLog::parse_csv(&std::fs::read_to_string(metrics_path)?)?;
    export_curves(&metrics, out.join("curves.csv")).map_err(|e| CliError::Io(e.to_string()))?;
    println!("wrote {} and curves.csv", out.join("report.csv").display());
    Ok(())
}

fn report(out: &Path) -> Result<(), CliError> {
    let path = out.join("report.csv");
    if !path.exists() {
        return Err(CliError::Dependency(format!("missing {}", path.display())));
    }
    let text = std::fs::read_to_string(&path)?;
    let mut results = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line != "model,domain,ter,rel_delta" {
                return Err(CliError::Io(format!(
                    "unexpected report header in {}",
                    path.display()
                )));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(CliError::Io(format!("malformed report line {}", idx + 1)));
        }
        let ter: f64 = fields[2]
            .parse()
            .map_err(|e| CliError::Io(format!("line {}: {e}", idx + 1)))?;
        results.push(EvalResult {
            model_name: fields[0].to_string(),
            domain_name: fields[1].to_string(),
            split: "test".into(),
            frame_acc: 0.0,
            ter,
            substitutions: 0,
            deletions: 0,
            insertions: 0,
            ref_tokens: 0,
        });
    }
    let grid = build_report(&results, "baseline")
        .map_err(|e| CliError::Dependency(e.to_string()))?;
    print!("{}", grid.render_text());
    Ok(())
}
