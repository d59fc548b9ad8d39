//! Acceptance suite: one test per shipped guarantee, each printing a
//! PASS/FAIL line (visible with `--nocapture`).
//!
//! The seeded end-to-end checks share five pipeline executions (three
//! speaking-style seeds, one environment seed, and a determinism re-run),
//! computed once and reused across tests.

mod common;

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::{network_gradient_error, random_matrix, small_fsmn_spec, small_lstm_spec};
use mdistill::config::{env3, style3, ExperimentConfig};
use mdistill::eval::{build_report, evaluate_per_domain, EvalResult};
use mdistill::losses::{
    ctc_brute_force, ctc_loss, ctc_mixed_loss, ensemble_posterior, hard_ce, interpolate_targets,
    soft_target_ce, PosteriorSeq, TargetDistribution,
};
use mdistill::netgraph::save_checkpoint;
use mdistill::numcore::{finite_diff_grad, max_rel_error, softmax_rows, Matrix, RngStream};
use mdistill::parallel::worker_threads;
use mdistill::synthcorpus::{
    compute_deltas, generate_corpus, stack_subsample, write_corpus, CorpusManifest, DomainConfig,
    SplitCounts,
};
use mdistill::trainer::{MetricsLog, PipelineConfig, PreparedCorpus, TaskMode};

// ---------------------------------------------------------------------------
// Criterion bookkeeping
// ---------------------------------------------------------------------------

struct Criterion {
    id: u32,
    name: &'static str,
    failures: Vec<String>,
}

impl Criterion {
    fn new(id: u32, name: &'static str) -> Criterion {
        Criterion {
            id,
            name,
            failures: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, detail: String) {
        if !ok {
            self.failures.push(detail);
        }
    }

    fn finish(self) {
        if self.failures.is_empty() {
            println!("acceptance criterion {:>2} ({}): PASS", self.id, self.name);
        } else {
            println!("acceptance criterion {:>2} ({}): FAIL", self.id, self.name);
            panic!(
                "criterion {} failed:\n  {}",
                self.id,
                self.failures.join("\n  ")
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Shared pipeline runs
// ---------------------------------------------------------------------------

struct SeedRun {
    seed: u64,
    elapsed: Duration,
    metrics_csv: String,
    /// TER/frame-acc rows for all five models over the test split.
    results: Vec<EvalResult>,
    domains: Vec<(u32, String)>,
    routing_trace: Vec<(u64, u32)>,
    train_domain_by_utterance: BTreeMap<u64, u32>,
    n_train: usize,
    student_epochs: usize,
    /// (name, checkpoint bytes written before student training,
    ///  bytes of the same teacher re-serialized after the pipeline).
    teacher_bytes: Vec<(String, Vec<u8>, Vec<u8>)>,
    /// Last overall dev frame accuracy per stage label.
    final_dev_acc: BTreeMap<String, f64>,
}

struct Runs {
    style: Vec<SeedRun>,
    env: SeedRun,
    style_seed1_rerun_csv: String,
}

fn seeded(mut config: ExperimentConfig, seed: u64) -> ExperimentConfig {
    config.corpus.master_seed = seed;
    config.training.seed = seed;
    config
}

fn run_experiment(config: &ExperimentConfig) -> SeedRun {
    let started = Instant::now();
    let manifest = config.corpus.manifest();
    let corpus = generate_corpus(&manifest, worker_threads()).expect("corpus generation");
    let prepared = PreparedCorpus::prepare(&corpus).expect("feature pipeline");
    let spec = config
        .network
        .spec(prepared.input_dim(), prepared.num_labels());

    let models_dir = tempfile::tempdir().expect("tempdir");
    let mut metrics = MetricsLog::in_memory();
    let pipeline = PipelineConfig {
        spec: spec.clone(),
        train: config.training.train_config(),
        seed: config.training.seed,
        student_from_scratch: config.training.student_from_scratch,
    };
    let output = mdistill::trainer::run_pipeline(
        &pipeline,
        &prepared,
        Some(models_dir.path()),
        &mut metrics,
    )
    .expect("pipeline");

    // Teacher checkpoints were written before student training started;
    // re-serializing the in-memory teachers afterwards must give the same
    // bytes.
    let mut teacher_bytes = Vec::new();
    for (domain_id, teacher_spec, params) in output.teacher_bank.teachers() {
        let name = manifest.domain(*domain_id).expect("domain").name.clone();
        let before =
            std::fs::read(models_dir.path().join(format!("teacher_{name}.mdst"))).expect("read");
        let resave = models_dir.path().join(format!("resaved_{name}.mdst"));
        save_checkpoint(params, teacher_spec, &resave).expect("save");
        let after = std::fs::read(&resave).expect("read");
        teacher_bytes.push((name, before, after));
    }

    let domains = prepared.domains();
    let threads = worker_threads();
    let mut results = Vec::new();
    let mut models: Vec<(String, &mdistill::netgraph::ModelParams)> =
        vec![("baseline".into(), &output.baseline)];
    for (domain_id, _, params) in output.teacher_bank.teachers() {
        let name = manifest.domain(*domain_id).expect("domain").name.clone();
        models.push((format!("teacher_{name}"), params));
    }
    models.push(("student".into(), &output.student));
    for (name, params) in &models {
        results.extend(
            evaluate_per_domain(
                name,
                params,
                &spec,
                &domains,
                &prepared.test,
                "test",
                TaskMode::FrameCe,
                threads,
            )
            .expect("evaluation"),
        );
    }

    let student_epochs = metrics
        .rows()
        .iter()
        .filter(|r| r.stage == "student" && r.split == "train")
        .count();
    let mut final_dev_acc = BTreeMap::new();
    for row in metrics.rows() {
        if row.split == "dev" && row.domain == "all" {
            final_dev_acc.insert(row.stage.clone(), row.frame_acc);
        }
    }

    SeedRun {
        seed: config.training.seed,
        elapsed: started.elapsed(),
        metrics_csv: metrics.to_csv(),
        results,
        domains,
        routing_trace: output.routing_trace,
        train_domain_by_utterance: prepared
            .train
            .iter()
            .map(|u| (u.utterance_id, u.domain_id))
            .collect(),
        n_train: prepared.train.len(),
        student_epochs,
        teacher_bytes,
        final_dev_acc,
    }
}

fn runs() -> &'static Runs {
    static RUNS: OnceLock<Runs> = OnceLock::new();
    RUNS.get_or_init(|| {
        let jobs: Vec<ExperimentConfig> = vec![
            seeded(style3(), 1),
            seeded(style3(), 2),
            seeded(style3(), 3),
            seeded(env3(), 1),
            seeded(style3(), 1), // determinism re-run
        ];
        let mut outputs: Vec<Option<SeedRun>> = (0..jobs.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|config| scope.spawn(move || run_experiment(config)))
                .collect();
            for (slot, handle) in outputs.iter_mut().zip(handles) {
                *slot = Some(handle.join().expect("pipeline thread"));
            }
        });
        let mut outputs: Vec<SeedRun> = outputs.into_iter().map(|o| o.expect("run")).collect();
        let rerun = outputs.pop().expect("rerun");
        let env = outputs.pop().expect("env");
        Runs {
            style: outputs,
            env,
            style_seed1_rerun_csv: rerun.metrics_csv,
        }
    })
}

fn ter(run: &SeedRun, model: &str, domain: &str) -> f64 {
    run.results
        .iter()
        .find(|r| r.model_name == model && r.domain_name == domain)
        .unwrap_or_else(|| panic!("missing result for {model}/{domain}"))
        .ter
}

// ---------------------------------------------------------------------------
// Criteria 1-3, 9, 10: property suites (no pipeline runs needed)
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_gradient_correctness() {
    let mut c = Criterion::new(1, "analytic gradients vs finite differences");
    let started = Instant::now();

    for seed in 0..20u64 {
        let fsmn = small_fsmn_spec(&mut RngStream::new(seed, 301));
        let err = network_gradient_error(&fsmn, seed);
        c.check(err < 1e-6, format!("FSMN seed {seed}: rel err {err:.3e}"));
        let lstm = small_lstm_spec(&mut RngStream::new(seed, 302));
        let err = network_gradient_error(&lstm, seed);
        c.check(err < 1e-6, format!("LSTM seed {seed}: rel err {err:.3e}"));
    }

    let mut rng = RngStream::new(9000, 0);
    for case in 0..20 {
        let frames = rng.uniform_usize(1, 6);
        let labels = rng.uniform_usize(2, 8);
        let logits = random_matrix(&mut rng, frames, labels, 2.0);
        let frame_labels: Vec<usize> =
            (0..frames).map(|_| rng.uniform_usize(0, labels - 1)).collect();

        let hard = hard_ce(&frame_labels, &logits).unwrap();
        let numeric = finite_diff_grad(
            |flat| {
                let l = Matrix::from_vec(frames, labels, flat.to_vec()).unwrap();
                hard_ce(&frame_labels, &l).unwrap().loss
            },
            logits.data(),
            1e-5,
        );
        let err = max_rel_error(hard.dlogits.data(), &numeric);
        c.check(err < 1e-6, format!("hard CE case {case}: rel err {err:.3e}"));

        let targets = TargetDistribution::new(
            softmax_rows(&random_matrix(&mut rng, frames, labels, 2.0)).unwrap(),
        )
        .unwrap();
        let soft = soft_target_ce(&targets, &logits).unwrap();
        let numeric = finite_diff_grad(
            |flat| {
                let l = Matrix::from_vec(frames, labels, flat.to_vec()).unwrap();
                soft_target_ce(&targets, &l).unwrap().loss
            },
            logits.data(),
            1e-5,
        );
        let err = max_rel_error(soft.dlogits.data(), &numeric);
        c.check(err < 1e-6, format!("soft CE case {case}: rel err {err:.3e}"));
    }

    let mut rng = RngStream::new(9001, 0);
    let mut done = 0;
    while done < 20 {
        let labels = rng.uniform_usize(3, 6);
        let k = rng.uniform_usize(1, 2);
        let tokens: Vec<usize> = (0..k).map(|_| rng.uniform_usize(1, labels - 1)).collect();
        let min_frames = tokens.len() + tokens.windows(2).filter(|w| w[0] == w[1]).count();
        if min_frames > 6 {
            continue;
        }
        let frames = rng.uniform_usize(min_frames.max(2), 6);
        let logits = random_matrix(&mut rng, frames, labels, 2.0);

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
        c.check(err < 1e-5, format!("CTC case {done}: rel err {err:.3e}"));

        let soft = PosteriorSeq::from_logits(&random_matrix(&mut rng, frames, labels, 2.0)).unwrap();
        let mixed = ctc_mixed_loss(&logits, &soft, &tokens, 0.8).unwrap();
        let numeric = finite_diff_grad(
            |flat| {
                let l = Matrix::from_vec(frames, labels, flat.to_vec()).unwrap();
                ctc_mixed_loss(&l, &soft, &tokens, 0.8).unwrap().loss
            },
            logits.data(),
            1e-5,
        );
        let err = max_rel_error(mixed.dlogits.data(), &numeric);
        c.check(err < 1e-5, format!("CTC-mixed case {done}: rel err {err:.3e}"));
        done += 1;
    }

    let elapsed = started.elapsed();
    c.check(
        elapsed < Duration::from_secs(30),
        format!("gradient suite took {elapsed:?} (limit 30 s)"),
    );
    c.finish();
}

#[test]
fn criterion_02_ctc_oracle_equivalence() {
    let mut c = Criterion::new(2, "CTC equals brute-force enumeration");
    let started = Instant::now();
    let mut rng = RngStream::new(9002, 0);
    let mut done = 0;
    while done < 100 {
        let labels = rng.uniform_usize(2, 5);
        let k = rng.uniform_usize(1, 3);
        let tokens: Vec<usize> = (0..k).map(|_| rng.uniform_usize(1, labels - 1)).collect();
        let min_frames = tokens.len() + tokens.windows(2).filter(|w| w[0] == w[1]).count();
        if min_frames > 8 {
            continue;
        }
        let frames = rng.uniform_usize(min_frames, 8);
        let logits = random_matrix(&mut rng, frames, labels, 2.0);
        let dp = ctc_loss(&logits, &tokens).unwrap().loss;
        let brute = ctc_brute_force(&PosteriorSeq::from_logits(&logits).unwrap(), &tokens).unwrap();
        c.check(
            (dp - brute).abs() < 1e-8,
            format!("case {done}: dp {dp} vs brute {brute} (tokens {tokens:?})"),
        );
        done += 1;
    }
    let elapsed = started.elapsed();
    c.check(
        elapsed < Duration::from_secs(10),
        format!("oracle suite took {elapsed:?} (limit 10 s)"),
    );
    c.finish();
}

#[test]
fn criterion_03_interpolation_and_ensemble_algebra() {
    let mut c = Criterion::new(3, "target interpolation / ensemble algebra");
    let mut rng = RngStream::new(9003, 0);
    for case in 0..1000 {
        let frames = rng.uniform_usize(1, 4);
        let labels = rng.uniform_usize(2, 6);
        let soft = PosteriorSeq::from_logits(&random_matrix(&mut rng, frames, labels, 3.0)).unwrap();
        let frame_labels: Vec<usize> =
            (0..frames).map(|_| rng.uniform_usize(0, labels - 1)).collect();

        for w_hard in [0.0, 0.8, 1.0] {
            let targets = interpolate_targets(&soft, &frame_labels, w_hard).unwrap();
            for (t, &hard_label) in frame_labels.iter().enumerate() {
                let row = targets.rows().row(t);
                let sum: f64 = row.iter().sum();
                c.check(
                    (sum - 1.0).abs() <= 1e-9 && row.iter().all(|&v| v >= 0.0),
                    format!("case {case}: w={w_hard} row {t} off the simplex (sum {sum})"),
                );
                if w_hard == 1.0 {
                    let exact = row
                        .iter()
                        .enumerate()
                        .all(|(l, &v)| v == if l == hard_label { 1.0 } else { 0.0 });
                    c.check(exact, format!("case {case}: w=1 row {t} is not exactly one-hot"));
                }
            }
        }

        let mixed = ensemble_posterior(std::slice::from_ref(&soft), &[1.0]).unwrap();
        c.check(
            mixed == soft,
            format!("case {case}: singleton ensemble is not the identity"),
        );
    }
    c.finish();
}

#[test]
fn criterion_09_feature_pipeline_contracts() {
    let mut c = Criterion::new(9, "feature pipeline contracts");
    let mut rng = RngStream::new(9009, 0);

    // Stack/subsample shape law over randomized lengths and dims.
    for _ in 0..200 {
        let frames = rng.uniform_usize(1, 1000);
        let dim = rng.uniform_usize(1, 6);
        let data = (0..frames * dim).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let m = Matrix::from_vec(frames, dim, data).unwrap();
        let labels = vec![1usize; frames];
        let view = stack_subsample(&m, &labels);
        c.check(
            view.frames.rows() == frames.div_ceil(3),
            format!("T={frames}: stacked rows {}", view.frames.rows()),
        );
        c.check(
            view.frames.cols() == 8 * dim,
            format!("D={dim}: stacked dim {}", view.frames.cols()),
        );
    }

    // Derivative append vanishes on constants.
    for _ in 0..50 {
        let frames = rng.uniform_usize(1, 40);
        let dim = rng.uniform_usize(1, 5);
        let value = rng.uniform(-5.0, 5.0);
        let with_deltas = compute_deltas(&Matrix::filled(frames, dim, value));
        for t in 0..frames {
            let row = with_deltas.row(t);
            c.check(
                row[dim..].iter().all(|&v| v == 0.0),
                format!("delta of constant sequence non-zero at frame {t}"),
            );
        }
    }

    // Global normalization over randomized corpora: training split comes out
    // zero-mean unit-variance per dimension.
    for trial in 0..3u64 {
        let manifest = CorpusManifest::build(
            5,
            3,
            5000 + trial,
            vec![
                DomainConfig::clean(0, "A", (2, 5), 0.3, 0.2),
                DomainConfig::clean(1, "B", (3, 6), 0.5, 0.1),
            ],
            SplitCounts {
                train: 10,
                dev: 2,
                test: 2,
            },
        );
        let corpus = generate_corpus(&manifest, 2).unwrap();
        let prepared = PreparedCorpus::prepare(&corpus).unwrap();
        let dim = prepared.input_dim();
        let mut count = 0usize;
        let mut mean = vec![0.0; dim];
        for utt in &prepared.train {
            for t in 0..utt.view.frames.rows() {
                for (m, &v) in mean.iter_mut().zip(utt.view.frames.row(t)) {
                    *m += v;
                }
                count += 1;
            }
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        let mut var = vec![0.0; dim];
        for utt in &prepared.train {
            for t in 0..utt.view.frames.rows() {
                for ((s, &v), &m) in var.iter_mut().zip(utt.view.frames.row(t)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        for (d, (&m, &s)) in mean.iter().zip(&var).enumerate() {
            c.check(
                m.abs() < 1e-9,
                format!("trial {trial}: normalized mean[{d}] = {m:e}"),
            );
            c.check(
                (s / count as f64 - 1.0).abs() < 1e-6,
                format!("trial {trial}: normalized var[{d}] = {}", s / count as f64),
            );
        }
    }
    c.finish();
}

#[test]
fn criterion_10_report_arithmetic() {
    let mut c = Criterion::new(10, "published relative deltas");
    let cell = |model: &str, domain: &str, ter: f64| EvalResult {
        model_name: model.into(),
        domain_name: domain.into(),
        split: "test".into(),
        frame_acc: 0.0,
        ter,
        substitutions: 0,
        deletions: 0,
        insertions: 0,
        ref_tokens: 1,
    };
    let results = vec![
        cell("baseline", "Spon", 23.18),
        cell("student", "Spon", 20.76),
        cell("baseline", "Read", 17.37),
        cell("student", "Read", 16.37),
        cell("baseline", "Lect", 15.92),
        cell("student", "Lect", 15.13),
    ];
    let grid = build_report(&results, "baseline").unwrap();
    let student_row = grid
        .models
        .iter()
        .position(|m| m == "student")
        .expect("student row");
    for (domain, expected) in [("Spon", -10.4), ("Read", -5.8), ("Lect", -5.0)] {
        let col = grid.domains.iter().position(|d| d == domain).unwrap();
        let rounded = (grid.cells[student_row][col].rel_delta * 1000.0).round() / 10.0;
        c.check(
            rounded == expected,
            format!("{domain}: rel delta {rounded} vs published {expected}"),
        );
    }
    let text = grid.render_text();
    for needle in ["-10.4%", "-5.8%", "-5.0%"] {
        c.check(text.contains(needle), format!("rendering lacks {needle}"));
    }
    c.finish();
}

// ---------------------------------------------------------------------------
// Criteria 4-8: seeded end-to-end runs
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_routing_invariant() {
    let mut c = Criterion::new(4, "domain routing and frozen teachers");
    let run = &runs().style[0];

    c.check(
        run.student_epochs >= 1,
        "student stage ran no epochs".to_string(),
    );
    c.check(
        run.routing_trace.len() == run.n_train * run.student_epochs,
        format!(
            "routing trace covers {} samples, expected {} x {}",
            run.routing_trace.len(),
            run.n_train,
            run.student_epochs
        ),
    );
    let mismatches = run
        .routing_trace
        .iter()
        .filter(|(utt, teacher)| run.train_domain_by_utterance.get(utt) != Some(teacher))
        .count();
    c.check(
        mismatches == 0,
        format!("{mismatches} routed samples went to a mismatched teacher"),
    );
    for (name, before, after) in &run.teacher_bytes {
        c.check(
            before == after,
            format!("teacher_{name} checkpoint changed during student training"),
        );
    }
    // Distinct domains produce distinct experts.
    for (i, (name_a, bytes_a, _)) in run.teacher_bytes.iter().enumerate() {
        for (name_b, bytes_b, _) in run.teacher_bytes.iter().skip(i + 1) {
            c.check(
                bytes_a != bytes_b,
                format!("teacher_{name_a} and teacher_{name_b} are identical"),
            );
        }
    }
    c.finish();
}

#[test]
fn criterion_05_table_pattern_on_style_domains() {
    let mut c = Criterion::new(5, "teacher/student error-rate pattern (style3)");
    let style = &runs().style;
    let domain_names: Vec<String> = style[0].domains.iter().map(|(_, n)| n.clone()).collect();

    for run in style {
        println!("--- style3 seed {} (elapsed {:?}) ---", run.seed, run.elapsed);
        let grid = build_report(&run.results, "baseline").unwrap();
        print!("{}", grid.render_text());
        c.check(
            run.elapsed < Duration::from_secs(600),
            format!("seed {}: pipeline took {:?} (limit 10 min)", run.seed, run.elapsed),
        );

        for domain in &domain_names {
            let baseline = ter(run, "baseline", domain);
            // (a) in-domain: the domain's own teacher is at least as good.
            let own = ter(run, &format!("teacher_{domain}"), domain);
            c.check(
                own <= baseline,
                format!(
                    "seed {}: teacher_{domain} in-domain TER {own:.4} > baseline {baseline:.4}",
                    run.seed
                ),
            );
            // (b) out-of-domain: the teacher's mean TER on the other two
            // domains is no better than the baseline's mean.
            let others: Vec<&String> = domain_names.iter().filter(|d| *d != domain).collect();
            let teacher_mean: f64 = others
                .iter()
                .map(|d| ter(run, &format!("teacher_{domain}"), d))
                .sum::<f64>()
                / others.len() as f64;
            let baseline_mean: f64 =
                others.iter().map(|d| ter(run, "baseline", d)).sum::<f64>() / others.len() as f64;
            c.check(
                teacher_mean >= baseline_mean,
                format!(
                    "seed {}: teacher_{domain} mean out-of-domain TER {teacher_mean:.4} < baseline {baseline_mean:.4}",
                    run.seed
                ),
            );
        }
    }

    // (c) per domain, the student beats or ties the baseline in at least
    // 2 of the 3 seeds.
    for domain in &domain_names {
        let wins = style
            .iter()
            .filter(|run| ter(run, "student", domain) <= ter(run, "baseline", domain))
            .count();
        c.check(
            wins >= 2,
            format!("student <= baseline on {domain} in only {wins}/3 seeds"),
        );
    }
    c.finish();
}

#[test]
fn criterion_06_student_dev_accuracy() {
    let mut c = Criterion::new(6, "student ends at least as high on pooled dev");
    let mut wins = 0;
    for run in &runs().style {
        let baseline = run.final_dev_acc["baseline"];
        let student = run.final_dev_acc["student"];
        println!(
            "seed {}: final dev accuracy baseline {:.4} student {:.4}",
            run.seed, baseline, student
        );
        // Seeded regression floor: the multi-condition model must clear 70%
        // pooled dev accuracy (chance is 5% at this vocabulary size).
        c.check(
            baseline > 0.70,
            format!("seed {}: baseline dev accuracy {baseline:.4} <= 0.70", run.seed),
        );
        if student >= baseline {
            wins += 1;
        }
    }
    c.check(wins >= 2, format!("student >= baseline in only {wins}/3 seeds"));
    c.finish();
}

#[test]
fn criterion_07_environment_setup() {
    let mut c = Criterion::new(7, "environment preset (env3)");
    let run = &runs().env;
    println!("--- env3 seed {} (elapsed {:?}) ---", run.seed, run.elapsed);
    let grid = build_report(&run.results, "baseline").unwrap();
    print!("{}", grid.render_text());
    for (_, domain) in &run.domains {
        let baseline = ter(run, "baseline", domain);
        let student = ter(run, "student", domain);
        c.check(
            student <= baseline,
            format!("student TER {student:.4} > baseline {baseline:.4} on {domain}"),
        );
    }
    c.finish();
}

#[test]
fn criterion_08_determinism() {
    let mut c = Criterion::new(8, "bitwise reproducibility");
    let runs = runs();
    c.check(
        runs.style[0].metrics_csv == runs.style_seed1_rerun_csv,
        "re-running style3 seed 1 produced a different metrics CSV".to_string(),
    );

    // Corpus generation must not depend on the worker-thread count.
    let manifest = seeded(style3(), 1).corpus.manifest();
    let serial = generate_corpus(&manifest, 1).unwrap();
    let parallel = generate_corpus(&manifest, 7).unwrap();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    write_corpus(&serial, dir_a.path()).unwrap();
    write_corpus(&parallel, dir_b.path()).unwrap();
    for name in ["manifest.json", "train.bin", "dev.bin", "test.bin"] {
        let a = std::fs::read(dir_a.path().join(name)).unwrap();
        let b = std::fs::read(dir_b.path().join(name)).unwrap();
        c.check(a == b, format!("{name} differs between serial and parallel generation"));
    }
    c.finish();
}
