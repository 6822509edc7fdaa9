//! Acceptance checks. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any fails.
//!
//! Criterion 5 trains six 20 000-iteration sinusoid models and dominates
//! the runtime (tens of minutes on a single core). Criterion numbers given
//! as arguments restrict the run to those, e.g.
//! `cargo test --test acceptance -- 1 9`.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use tailrisk::autodiff::finite_difference_check;
use tailrisk::eval::{evaluate, linearity_in_q_check, quantile_benchmark, LossSource};
use tailrisk::meta::{task_loss_and_grad, task_loss_value, train, FollowerVariant, Learner, Strategy};
use tailrisk::params::ParamVector;
use tailrisk::risk::{
    cvar_exact_discrete, cvar_hinge, kde_cdf, var_mc, KdeConfig, QuantileMethod, RiskBatch,
};
use tailrisk::tasks::{sinusoid_task, SinusoidConfig, SinusoidMode};
use tailrisk_cli::commands::{self, DiagnoseInputs, Diagnostic};
use tailrisk_cli::config::{Benchmark, ExperimentConfig};

type Check = Box<dyn Fn() -> Outcome>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Second-order MAML meta-gradient of the 2x40 sinusoid network against
/// central differences.
fn gradient_check() -> Outcome {
    let cfg = ExperimentConfig::for_benchmark(Benchmark::Sinusoid5);
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let p = ParamVector::init(cfg.arch(), 100 + seed);
        let task = sinusoid_task(&SinusoidConfig::default(), seed, 0, SinusoidMode::TestUniform);
        let lr = cfg.train.inner_lr;
        let (_, grad) = task_loss_and_grad(&p, &task, Learner::Maml, lr, true).unwrap();
        let f = |x: &[f64]| task_loss_value(&p.with_values(x.to_vec()).unwrap(), &task, Learner::Maml, lr).unwrap();
        let r = finite_difference_check(f, p.values(), &grad, 1e-6, 1e-4).unwrap();
        worst = worst.max(r.max_rel_error);
    }
    outcome(worst <= 1e-4, format!("max relative error {worst:.3e} over 5 seeds (tol 1e-4)"))
}

/// CVaR at alpha = 0 against ERM, every estimator and follower variant.
fn zero_alpha_reduction() -> Outcome {
    let base = ExperimentConfig::for_benchmark(Benchmark::Sinusoid5).with_seed(5);
    let run = |strategy, estimator, follower| {
        let mut tc = base.train.clone();
        tc.alpha = 0.0;
        tc.iterations = 100;
        tc.snapshot_every = 1;
        tc.strategy = strategy;
        tc.estimator = estimator;
        tc.follower = follower;
        tc.workers = workers();
        let init = ParamVector::init(base.arch(), base.init_seed);
        train(&tc, base.train_source().as_ref(), init).unwrap().1.snapshots
    };
    let erm = run(Strategy::Erm, QuantileMethod::Mc, FollowerVariant::Screening);
    let mut worst: f64 = 0.0;
    for est in [QuantileMethod::Mc, QuantileMethod::Kde] {
        for fol in [FollowerVariant::Hinge, FollowerVariant::Screening] {
            let snaps = run(Strategy::Cvar, est, fol);
            assert_eq!(snaps.len(), erm.len());
            for ((_, a), (_, b)) in erm.iter().zip(&snaps) {
                worst = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
            }
        }
    }
    outcome(worst <= 1e-12, format!("max coordinate deviation {worst:.3e} over 100 iterations (tol 1e-12)"))
}

/// Hinge objective at the Monte Carlo quantile against the brute-force
/// screened mean on every small integer batch.
fn hinge_screening_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0usize;
    for b in 1..=6usize {
        for code in 0..5usize.pow(b as u32) {
            let mut c = code;
            let losses: Vec<f64> = (0..b)
                .map(|_| {
                    let v = (c % 5 + 1) as f64;
                    c /= 5;
                    v
                })
                .collect();
            // oracle: sort, average the k largest
            let mut sorted = losses.clone();
            sorted.sort_by(|x, y| y.total_cmp(x));
            let batch = RiskBatch::from_losses(losses).unwrap();
            for k in 1..=b {
                let alpha = 1.0 - k as f64 / b as f64;
                let oracle = sorted[..k].iter().sum::<f64>() / k as f64;
                let xi = var_mc(&batch, alpha).unwrap().xi_hat;
                let hinge = cvar_hinge(&batch, xi, alpha).unwrap();
                worst = worst.max((hinge - oracle).abs());
                worst = worst.max((cvar_exact_discrete(&batch, alpha).unwrap() - oracle).abs());
                cases += 1;
            }
        }
    }
    outcome(worst <= 1e-12, format!("{cases} (batch, alpha) cases, max deviation {worst:.3e} (tol 1e-12)"))
}

/// Monte Carlo and kernel VaR error on Exp(1) at alpha = 0.7.
fn quantile_scaling() -> Outcome {
    let sizes = [25, 50, 100, 200, 400];
    let rows = quantile_benchmark(&LossSource::Exp1, &[0.7], &sizes, 1000, 0, &KdeConfig::default()).unwrap();
    let errors = |m: QuantileMethod| -> Vec<f64> {
        sizes
            .iter()
            .map(|&b| rows.iter().find(|r| r.method == m && r.batch_size == b).unwrap().mean_abs_error)
            .collect()
    };
    let (mc, kde) = (errors(QuantileMethod::Mc), errors(QuantileMethod::Kde));
    let non_increasing = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0]);
    let kde_wins = sizes.iter().zip(mc.iter().zip(&kde)).filter(|(&b, _)| b >= 100).all(|(_, (m, k))| k <= m);
    let fmt = |v: &[f64]| v.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>().join(" ");
    outcome(
        non_increasing(&mc) && non_increasing(&kde) && kde_wins,
        format!("1000 trials, B = 25..400: mc [{}] kde [{}]", fmt(&mc), fmt(&kde)),
    )
}

/// DR-MAML with kernel screening against ERM-MAML on the sinusoid test grid.
fn sinusoid_robustness() -> Outcome {
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 0..3 {
        let cfg = ExperimentConfig::for_benchmark(Benchmark::Sinusoid5).with_seed(seed);
        let test = cfg.test_set();
        let score = |strategy| {
            let mut tc = cfg.train.clone();
            tc.iterations = 20_000;
            tc.strategy = strategy;
            tc.workers = workers();
            let init = ParamVector::init(cfg.arch(), cfg.init_seed);
            let t = Instant::now();
            let (p, _) = train(&tc, cfg.train_source().as_ref(), init).unwrap();
            let m = evaluate(&p, Learner::Maml, &test, 0.7, tc.inner_lr, workers()).unwrap();
            eprintln!(
                "  seed {seed} {strategy:?}: average {:.4} cvar0.7 {:.4} ({:.0?})",
                m.average,
                m.cvar,
                t.elapsed()
            );
            m.cvar
        };
        let erm = score(Strategy::Erm);
        let dr = score(Strategy::Cvar);
        if dr < erm {
            wins += 1;
        }
        parts.push(format!("seed {seed}: dr {dr:.3} vs erm {erm:.3}"));
    }
    outcome(wins >= 2, format!("{wins}/3 seeds with lower CVaR0.7 test MSE ({})", parts.join(", ")))
}

fn toy_run(dir: &Path) -> ExperimentConfig {
    let cfg = ExperimentConfig::for_benchmark(Benchmark::Toy);
    commands::train(&cfg, 1, dir).unwrap();
    cfg
}

fn toy_diagnostic(which: Diagnostic, dir: &Path) -> Outcome {
    let cfg = toy_run(dir);
    let inputs = DiagnoseInputs {
        trace: Some(dir.join("trace.csv")),
        snapshots: Some(dir.join("snapshots.csv")),
        checkpoint: None,
        reference: None,
    };
    let (s, _) = commands::diagnose(which, &cfg, &inputs, 1, dir).unwrap();
    outcome(s.pass == Some(true), format!("{} iterations: {}", cfg.train.iterations, s.line()))
}

fn generalization_bound(dir: &Path) -> Outcome {
    let cfg = ExperimentConfig::for_benchmark(Benchmark::Toy);
    let b = &cfg.bound;
    let detail = format!(
        "B = {}, alpha = {}, eps = {}, {} batches, {} reference samples",
        b.batch_size, b.alpha, b.epsilon, b.batches, b.reference_samples
    );
    let inputs = DiagnoseInputs { trace: None, snapshots: None, checkpoint: None, reference: None };
    let (s, _) = commands::diagnose(Diagnostic::Bound, &cfg, &inputs, 1, dir).unwrap();
    outcome(s.value >= 0.95, format!("{detail}: holds in {:.1}% of batches", 100.0 * s.value))
}

/// Single-sample kernel CDF against Simpson integration of the Gaussian
/// density.
fn kde_cdf_oracle() -> Outcome {
    let (x0, h) = (1.7, 0.35);
    let batch = RiskBatch::from_losses(vec![x0]).unwrap();
    let oracle = |l: f64| {
        let density = |t: f64| (-0.5 * ((t - x0) / h).powi(2)).exp() / (h * (2.0 * std::f64::consts::PI).sqrt());
        let lo = x0 - 12.0 * h;
        let n = 4000;
        let step = (l - lo) / n as f64;
        let mut acc = density(lo) + density(l);
        for i in 1..n {
            acc += density(lo + step * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * step / 3.0
    };
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    let mut prev = 0.0;
    for i in 0..100 {
        let l = x0 - 6.0 * h + 12.0 * h * i as f64 / 99.0;
        let v = kde_cdf(&batch, h, l).unwrap();
        worst = worst.max((v - oracle(l)).abs());
        monotone &= v >= prev - 1e-9;
        prev = v;
    }
    let low = kde_cdf(&batch, h, x0 - 100.0 * h).unwrap();
    let high = kde_cdf(&batch, h, x0 + 100.0 * h).unwrap();
    let limits = low.abs() <= 1e-9 && (1.0 - high).abs() <= 1e-9;
    outcome(
        worst <= 1e-6 && monotone && limits,
        format!("100 points, max error {worst:.3e}; monotone {monotone}; limits {low:.1e}, {high}"),
    )
}

fn linearity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let losses: Vec<f64> = (0..10).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let q1 = commands::random_distribution(&mut rng, 10);
        let q2 = commands::random_distribution(&mut rng, 10);
        let lam: f64 = rng.random();
        worst = worst.max(linearity_in_q_check(&losses, &q1, &q2, &[lam]).unwrap());
    }
    outcome(worst <= 1e-12, format!("100 triples on 10-task batches, max deviation {worst:.3e} (tol 1e-12)"))
}

/// The binary run twice on the same configuration with 1 and 8 workers.
fn determinism(dir: &Path) -> Outcome {
    let cfg = dir.join("sin.toml");
    fs::write(&cfg, "benchmark = \"sinusoid5\"\n[train]\niterations = 40\nsnapshot_every = 10\n").unwrap();
    let run = |w: &str| {
        let out = dir.join(format!("w{w}"));
        let status = Command::new(env!("CARGO_BIN_EXE_tailrisk"))
            .args(["train", "--config", cfg.to_str().unwrap(), "--seed", "3", "--workers", w, "--out"])
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        out
    };
    let (a, b) = (run("1"), run("8"));
    let files = ["trace.csv", "metrics.csv", "snapshots.csv", "checkpoint.toml"];
    let same: Vec<bool> = files.iter().map(|f| fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap()).collect();
    outcome(
        same.iter().all(|&s| s),
        files.iter().zip(&same).map(|(f, s)| format!("{f} {}", if *s { "identical" } else { "differs" })).collect::<Vec<_>>().join(", "),
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let sub = |name: &str| {
        let p = tmp.path().join(name);
        fs::create_dir_all(&p).unwrap();
        p
    };
    let criteria: Vec<(&str, Check)> = vec![
        ("gradient correctness", Box::new(gradient_check)),
        ("alpha = 0 reduction", Box::new(zero_alpha_reduction)),
        ("hinge-screening equivalence", Box::new(hinge_screening_equivalence)),
        ("quantile estimator scaling", Box::new(quantile_scaling)),
        ("sinusoid robustness", Box::new(sinusoid_robustness)),
        ("monotone improvement", Box::new({ let d = sub("c6"); move || toy_diagnostic(Diagnostic::Monotone, &d) })),
        ("convergence ratio", Box::new({ let d = sub("c7"); move || toy_diagnostic(Diagnostic::Convergence, &d) })),
        ("generalization bound", Box::new({ let d = sub("c8"); move || generalization_bound(&d) })),
        ("kde cdf", Box::new(kde_cdf_oracle)),
        ("linearity in q", Box::new(linearity)),
        ("determinism", Box::new({ let d = sub("c11"); move || determinism(&d) })),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !selected.is_empty() && !selected.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "criterion {:>2} {}: {} -- {} [{:.1?}]",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            o.detail,
            t.elapsed()
        );
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
