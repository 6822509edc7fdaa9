//! The four subcommands. Each writes its artifacts under the output
//! directory and returns the run record that is also saved there.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use tailrisk::eval::{
    check_monotonic_trace, convergence_ratio, evaluate, generalization_bound, linearity_in_q_check,
    asymptotic_gap_probes, quantile_benchmark, LossSource, MetricsReport,
};
use tailrisk::meta::{train as run_training, Checkpoint};
use tailrisk::params::ParamVector;
use tailrisk::risk::{tail_mean, QuantileMethod};

use crate::config::{Benchmark, Distribution, ExperimentConfig};
use crate::output::{
    code_hash, code_version, ensure_dir, float, read_snapshots, read_trace, trace_rows,
    unix_now, write_csv, write_manifest, write_metrics, write_snapshots, write_task_losses,
    RunRecord, TRACE_HEADER,
};
use crate::CliError;

fn manifest(
    command: &str,
    cfg: &ExperimentConfig,
    started: u64,
    metrics: Option<&MetricsReport>,
    artifacts: Vec<PathBuf>,
) -> RunRecord {
    RunRecord {
        command: command.to_string(),
        config_hash: cfg.hash(),
        code_version: code_version(),
        code_hash: code_hash(),
        started_unix: started,
        finished_unix: unix_now(),
        metrics: metrics.map(Into::into),
        artifacts,
        config: toml::from_str(&cfg.canonical_toml()).expect("canonical config parses"),
    }
}

fn save_manifest(out: &Path, record: &RunRecord) -> Result<(), CliError> {
    write_manifest(&out.join(format!("run_{}.toml", record.command)), record)
}

/// Trains from a seeded initialization and writes the checkpoint, trace,
/// snapshots and test metrics.
pub fn train(cfg: &ExperimentConfig, workers: usize, out: &Path) -> Result<RunRecord, CliError> {
    let started = unix_now();
    ensure_dir(out)?;
    let mut tc = cfg.train.clone();
    tc.workers = workers;
    let init = ParamVector::init(cfg.arch(), cfg.init_seed);
    let source = cfg.train_source();
    let (params, trace) = run_training(&tc, source.as_ref(), init)?;

    let mut artifacts = Vec::new();
    let ck_path = out.join("checkpoint.toml");
    let mut ck = Checkpoint::new(&params, &tc, tc.iterations);
    ck.metadata.insert("benchmark".into(), cfg.benchmark.name().into());
    ck.metadata.insert("init_seed".into(), cfg.init_seed.to_string());
    ck.metadata.insert("config_hash".into(), cfg.hash());
    ck.save(&ck_path).map_err(|e| CliError::io(&ck_path, std::io::Error::other(e.to_string())))?;
    artifacts.push(ck_path);

    let trace_path = out.join("trace.csv");
    write_csv(&trace_path, &TRACE_HEADER, &trace_rows(&trace))?;
    artifacts.push(trace_path);
    if tc.snapshot_every > 0 {
        let p = out.join("snapshots.csv");
        write_snapshots(&p, &trace.snapshots)?;
        artifacts.push(p);
    }

    let test = cfg.test_set();
    let metrics = evaluate(&params, cfg.learner, &test, cfg.eval_alpha, tc.inner_lr, workers)?;
    let mp = out.join("metrics.csv");
    write_metrics(&mp, &metrics)?;
    artifacts.push(mp);

    let record = manifest("train", cfg, started, Some(&metrics), artifacts);
    save_manifest(out, &record)?;
    Ok(record)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.exists() {
        return Err(CliError::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    Ok(Checkpoint::load(path)?)
}

/// The experiment a checkpoint belongs to: `cfg` when given (its
/// architecture must match), otherwise the benchmark recorded in the
/// checkpoint.
fn checkpoint_context(
    ck: &Checkpoint,
    cfg: Option<ExperimentConfig>,
) -> Result<ExperimentConfig, CliError> {
    let cfg = match cfg {
        Some(c) => c,
        None => {
            let name = ck.metadata.get("benchmark").ok_or_else(|| {
                CliError::Checkpoint("checkpoint records no benchmark; pass --config".into())
            })?;
            let b = Benchmark::parse(name)
                .ok_or_else(|| CliError::Checkpoint(format!("unknown benchmark {name:?}")))?;
            let mut c = ExperimentConfig::for_benchmark(b);
            c.learner = ck.config.learner;
            c.train = ck.config.clone();
            c.eval_alpha = ck.config.alpha;
            c
        }
    };
    ck.expect_arch(&cfg.arch())?;
    Ok(cfg)
}

/// Scores a checkpoint on the benchmark's test tasks.
pub fn eval(
    checkpoint: &Path,
    cfg: Option<ExperimentConfig>,
    alpha: Option<f64>,
    workers: usize,
    out: &Path,
) -> Result<RunRecord, CliError> {
    let started = unix_now();
    let ck = load_checkpoint(checkpoint)?;
    let cfg = checkpoint_context(&ck, cfg)?;
    let params = ck.param_vector()?;
    let alpha = alpha.unwrap_or(cfg.eval_alpha);
    if !(0.0..1.0).contains(&alpha) {
        return Err(CliError::Config(format!("alpha = {alpha} outside [0, 1)")));
    }
    ensure_dir(out)?;
    let test = cfg.test_set();
    let metrics = evaluate(&params, ck.config.learner, &test, alpha, ck.config.inner_lr, workers)?;
    let ids: Vec<u64> = test.iter().map(|t| t.id).collect();
    let tasks_path = out.join("eval_tasks.csv");
    write_task_losses(&tasks_path, &ids, &metrics)?;
    let summary_path = out.join("eval_metrics.csv");
    write_metrics(&summary_path, &metrics)?;
    let record = manifest("eval", &cfg, started, Some(&metrics), vec![tasks_path, summary_path]);
    save_manifest(out, &record)?;
    Ok(record)
}

/// Losses of `params` on `n` fresh training-distribution tasks.
fn model_losses(
    cfg: &ExperimentConfig,
    ck: &Checkpoint,
    seed: u64,
    n: usize,
    workers: usize,
) -> Result<Vec<f64>, CliError> {
    let params = ck.param_vector()?;
    let tasks = cfg.task_source(seed).batch(0, n);
    let m = evaluate(&params, ck.config.learner, &tasks, 0.0, ck.config.inner_lr, workers)?;
    Ok(m.per_task_losses.into_iter().filter(|l| l.is_finite()).collect())
}

pub fn quantile_bench(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    workers: usize,
    out: &Path,
) -> Result<RunRecord, CliError> {
    let started = unix_now();
    let spec = &cfg.bench;
    let source = match spec.distribution {
        Distribution::Exp1 => LossSource::Exp1,
        Distribution::Model => {
            let path = checkpoint.ok_or_else(|| {
                CliError::Config("distribution = \"model\" needs --checkpoint".into())
            })?;
            let ck = load_checkpoint(path)?;
            LossSource::Empirical(model_losses(cfg, &ck, spec.seed, spec.pool_size, workers)?)
        }
    };
    ensure_dir(out)?;
    let mut rows = quantile_benchmark(&source, &spec.alphas, &spec.sizes, spec.trials, spec.seed, &cfg.train.kde)?;
    let rank = |m: QuantileMethod| match m {
        QuantileMethod::Kde => 0,
        QuantileMethod::Mc => 1,
    };
    rows.sort_by(|a, b| {
        rank(a.method)
            .cmp(&rank(b.method))
            .then(a.batch_size.cmp(&b.batch_size))
            .then(a.alpha.total_cmp(&b.alpha))
    });
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                match r.method {
                    QuantileMethod::Kde => "kde".to_string(),
                    QuantileMethod::Mc => "mc".to_string(),
                },
                r.batch_size.to_string(),
                float(r.mean_abs_error),
                r.trials.to_string(),
                float(r.alpha),
                float(r.oracle),
            ]
        })
        .collect();
    let path = out.join("quantile_bench.csv");
    write_csv(&path, &["method", "B", "mean_abs_error", "trials", "alpha", "oracle"], &csv_rows)?;
    let record = manifest("quantile-bench", cfg, started, None, vec![path]);
    save_manifest(out, &record)?;
    Ok(record)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Diagnostic {
    Monotone,
    Convergence,
    Bound,
    Gap,
    Linearity,
}

impl Diagnostic {
    fn name(self) -> &'static str {
        match self {
            Diagnostic::Monotone => "monotone",
            Diagnostic::Convergence => "convergence",
            Diagnostic::Bound => "bound",
            Diagnostic::Gap => "gap",
            Diagnostic::Linearity => "linearity",
        }
    }
}

/// Input artifacts for `diagnose`.
#[derive(Clone, Debug, Default)]
pub struct DiagnoseInputs {
    pub trace: Option<PathBuf>,
    pub snapshots: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub reference: Option<PathBuf>,
}

/// Outcome line of one diagnostic.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticSummary {
    pub diagnostic: &'static str,
    pub statistic: &'static str,
    pub value: f64,
    pub threshold: f64,
    /// `None` for report-only diagnostics.
    pub pass: Option<bool>,
}

impl DiagnosticSummary {
    pub fn line(&self) -> String {
        let status = match self.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "REPORT",
        };
        format!(
            "{}: {status} ({} = {:e}, threshold {:e})",
            self.diagnostic, self.statistic, self.value, self.threshold
        )
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str, which: Diagnostic) -> Result<&'a Path, CliError> {
    let p = p
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("{} needs {flag}", which.name())))?;
    if !p.exists() {
        return Err(CliError::io(p, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    Ok(p)
}

pub fn diagnose(
    which: Diagnostic,
    cfg: &ExperimentConfig,
    inputs: &DiagnoseInputs,
    workers: usize,
    out: &Path,
) -> Result<(DiagnosticSummary, RunRecord), CliError> {
    let started = unix_now();
    ensure_dir(out)?;
    let csv_path = out.join(format!("{}.csv", which.name()));
    let summary = match which {
        Diagnostic::Monotone => {
            let trace = read_trace(required(&inputs.trace, "--trace", which)?)?;
            let violations = check_monotonic_trace(&trace, 1e-9);
            let rows: Vec<Vec<String>> = violations
                .iter()
                .map(|&t| {
                    let i = trace.records.iter().position(|r| r.iter == t).expect("violation index");
                    let (prev, cur) = (trace.records[i - 1].follower_objective, trace.records[i].follower_objective);
                    vec![t.to_string(), float(prev), float(cur), float(cur - prev)]
                })
                .collect();
            write_csv(&csv_path, &["iter", "previous", "current", "increase"], &rows)?;
            DiagnosticSummary {
                diagnostic: "monotone",
                statistic: "violations",
                value: violations.len() as f64,
                threshold: 0.0,
                pass: Some(violations.is_empty()),
            }
        }
        Diagnostic::Convergence => {
            let snaps = read_snapshots(required(&inputs.snapshots, "--snapshots", which)?)?;
            let reference = snaps
                .last()
                .map(|s| s.1.clone())
                .ok_or_else(|| CliError::Config("empty snapshot file".into()))?;
            let values: Vec<Vec<f64>> = snaps.iter().map(|s| s.1.clone()).collect();
            let ratios = convergence_ratio(&values, &reference)?;
            let rows: Vec<Vec<String>> = ratios
                .iter()
                .enumerate()
                .map(|(i, &r)| vec![i.to_string(), float(r)])
                .collect();
            write_csv(&csv_path, &["index", "ratio"], &rows)?;
            let tail = &ratios[ratios.len().saturating_sub(50)..];
            let worst = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            DiagnosticSummary {
                diagnostic: "convergence",
                statistic: "max_ratio_last_50",
                value: worst,
                threshold: 1.0,
                pass: Some(worst < 1.0),
            }
        }
        Diagnostic::Bound => bound_harness(cfg, inputs, workers, &csv_path)?,
        Diagnostic::Gap => {
            let meta_ck = load_checkpoint(required(&inputs.checkpoint, "--checkpoint", which)?)?;
            let star_ck = load_checkpoint(required(&inputs.reference, "--reference", which)?)?;
            let ctx = checkpoint_context(&meta_ck, Some(cfg.clone()))?;
            star_ck.expect_arch(&ctx.arch())?;
            let test = ctx.test_set();
            let score = |ck: &Checkpoint| -> Result<Vec<f64>, CliError> {
                let p = ck.param_vector()?;
                Ok(evaluate(&p, ck.config.learner, &test, 0.0, ck.config.inner_lr, workers)?.per_task_losses)
            };
            let (lm, ls) = (score(&meta_ck)?, score(&star_ck)?);
            let dist = meta_ck
                .params
                .iter()
                .zip(&star_ck.params)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let g = asymptotic_gap_probes(&lm, &ls, ctx.eval_alpha, Some(dist))?;
            write_csv(
                &csv_path,
                &["p_t1", "p_t2", "var_meta", "var_star", "cvar_gap", "param_distance", "beta_tau_estimate"],
                &[vec![
                    float(g.p_t1),
                    float(g.p_t2),
                    float(g.var_meta),
                    float(g.var_star),
                    float(g.cvar_gap),
                    float(dist),
                    g.beta_tau_estimate.map(float).unwrap_or_default(),
                ]],
            )?;
            DiagnosticSummary {
                diagnostic: "gap",
                statistic: "cvar_gap",
                value: g.cvar_gap,
                threshold: f64::NAN,
                pass: None,
            }
        }
        Diagnostic::Linearity => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
            let losses: Vec<f64> = match &inputs.checkpoint {
                Some(p) => {
                    let ck = load_checkpoint(p)?;
                    model_losses(cfg, &ck, cfg.train.seed, 10, workers)?
                }
                None => (0..10).map(|_| rng.sample::<f64, _>(Exp1)).collect(),
            };
            let mut rows = Vec::with_capacity(100);
            let mut worst: f64 = 0.0;
            for i in 0..100 {
                let q1 = random_distribution(&mut rng, losses.len());
                let q2 = random_distribution(&mut rng, losses.len());
                let lam: f64 = rng.random();
                let d = linearity_in_q_check(&losses, &q1, &q2, &[lam])?;
                worst = worst.max(d);
                rows.push(vec![i.to_string(), float(lam), float(d)]);
            }
            write_csv(&csv_path, &["triple", "lambda", "deviation"], &rows)?;
            DiagnosticSummary {
                diagnostic: "linearity",
                statistic: "max_deviation",
                value: worst,
                threshold: 1e-12,
                pass: Some(worst <= 1e-12),
            }
        }
    };
    let summary_path = out.join(format!("{}_summary.csv", which.name()));
    write_csv(
        &summary_path,
        &["diagnostic", "statistic", "value", "threshold", "status"],
        &[vec![
            summary.diagnostic.to_string(),
            summary.statistic.to_string(),
            float(summary.value),
            float(summary.threshold),
            match summary.pass {
                Some(true) => "pass".into(),
                Some(false) => "fail".into(),
                None => "report".into(),
            },
        ]],
    )?;
    let record = manifest(
        &format!("diagnose-{}", which.name()),
        cfg,
        started,
        None,
        vec![csv_path, summary_path],
    );
    save_manifest(out, &record)?;
    Ok((summary, record))
}

pub fn random_distribution(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Resampled-batch check of the tail-risk generalization bound, on Exp(1)
/// losses or on a checkpoint's losses over fresh tasks.
fn bound_harness(
    cfg: &ExperimentConfig,
    inputs: &DiagnoseInputs,
    workers: usize,
    csv_path: &Path,
) -> Result<DiagnosticSummary, CliError> {
    let spec = &cfg.bound;
    let (batches, reference_sample): (Vec<Vec<f64>>, Vec<f64>) = match &inputs.checkpoint {
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let reference = (0..spec.reference_samples).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            rng.set_stream(1);
            let batches = (0..spec.batches)
                .map(|_| (0..spec.batch_size).map(|_| rng.sample::<f64, _>(Exp1)).collect())
                .collect();
            (batches, reference)
        }
        Some(p) => {
            let ck = load_checkpoint(p)?;
            let ctx = checkpoint_context(&ck, Some(cfg.clone()))?;
            let reference = model_losses(&ctx, &ck, spec.seed ^ 0x5eed, spec.reference_samples, workers)?;
            let all = model_losses(&ctx, &ck, spec.seed, spec.batches * spec.batch_size, workers)?;
            (all.chunks(spec.batch_size).filter(|c| c.len() >= 2).map(<[f64]>::to_vec).collect(), reference)
        }
    };
    let reference = tail_mean(&reference_sample, spec.alpha);
    let l_max = spec.l_max.unwrap_or_else(|| {
        batches.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    });
    let mut rows = Vec::with_capacity(batches.len());
    let mut held = 0usize;
    for (i, b) in batches.iter().enumerate() {
        let r = generalization_bound(b, spec.alpha, spec.epsilon, l_max, reference)?;
        held += r.holds as usize;
        rows.push(vec![
            i.to_string(),
            float(r.empirical_tail_risk),
            float(r.weighted_estimate),
            float(r.variance_term),
            float(r.bound_rhs),
            float(reference),
            (r.holds as u8).to_string(),
        ]);
    }
    write_csv(
        csv_path,
        &["batch", "empirical_tail_risk", "weighted_estimate", "variance_term", "bound_rhs", "reference_tail_risk", "holds"],
        &rows,
    )?;
    let rate = held as f64 / batches.len().max(1) as f64;
    Ok(DiagnosticSummary {
        diagnostic: "bound",
        statistic: "holds_rate",
        value: rate,
        threshold: 1.0 - spec.epsilon,
        pass: Some(rate >= 1.0 - spec.epsilon),
    })
}
