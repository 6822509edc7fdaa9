//! Experiment configuration files.
//!
//! TOML with a few top-level keys and optional `[train]`, `[kde]`, `[eval]`,
//! `[bench]` and `[bound]` sections. Every key has a per-benchmark default;
//! unknown keys are rejected.
//!
//! ```toml
//! benchmark = "sinusoid5"
//! learner = "maml"
//! output_dir = "runs/s5"
//!
//! [train]
//! strategy = "cvar"
//! estimator = "kde"
//! iterations = 20000
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use tailrisk::meta::{FollowerVariant, Learner, Strategy, TrainConfig};
use tailrisk::params::{Arch, CnpArch, MlpArch};
use tailrisk::risk::{BandwidthRule, KdeConfig, QuantileMethod};
use tailrisk::tasks::{
    quadratic_toy_tasks, test_grid_pendulum, test_grid_sinusoid, FixedTasks, PendulumConfig,
    PendulumSource, SinusoidConfig, SinusoidMode, SinusoidSource, TaskInstance, TaskSource,
};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Sinusoid5,
    Sinusoid10,
    Pendulum10,
    Pendulum20,
    Toy,
}

impl Benchmark {
    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Sinusoid5 => "sinusoid5",
            Benchmark::Sinusoid10 => "sinusoid10",
            Benchmark::Pendulum10 => "pendulum10",
            Benchmark::Pendulum20 => "pendulum20",
            Benchmark::Toy => "toy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Benchmark::Sinusoid5,
            Benchmark::Sinusoid10,
            Benchmark::Pendulum10,
            Benchmark::Pendulum20,
            Benchmark::Toy,
        ]
        .into_iter()
        .find(|b| b.name() == s)
    }

    fn io_dims(self) -> (usize, usize) {
        match self {
            Benchmark::Sinusoid5 | Benchmark::Sinusoid10 => (1, 1),
            Benchmark::Pendulum10 | Benchmark::Pendulum20 => (4, 3),
            Benchmark::Toy => (2, 1),
        }
    }

    fn default_train(self) -> TrainConfig {
        let base = TrainConfig::default();
        match self {
            Benchmark::Sinusoid5 => base,
            Benchmark::Sinusoid10 => TrainConfig {
                batch_size: 25,
                ..base
            },
            Benchmark::Pendulum10 | Benchmark::Pendulum20 => TrainConfig {
                alpha: 0.5,
                inner_lr: 1e-4,
                outer_lr: 1e-4,
                batch_size: 16,
                iterations: 5000,
                ..base
            },
            Benchmark::Toy => TrainConfig {
                alpha: 0.5,
                inner_lr: 0.05,
                outer_lr: 0.05,
                batch_size: 4,
                iterations: 500,
                estimator: QuantileMethod::Mc,
                follower: FollowerVariant::Screening,
                snapshot_every: 1,
                ..base
            },
        }
    }

    fn default_test_tasks(self) -> usize {
        match self {
            Benchmark::Sinusoid5 | Benchmark::Sinusoid10 => 490,
            Benchmark::Pendulum10 | Benchmark::Pendulum20 => 529,
            Benchmark::Toy => 4,
        }
    }

    fn sinusoid(self) -> SinusoidConfig {
        SinusoidConfig::with_shots(if self == Benchmark::Sinusoid10 { 10 } else { 5 })
    }

    fn pendulum(self) -> PendulumConfig {
        PendulumConfig::with_shots(if self == Benchmark::Pendulum20 { 20 } else { 10 })
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub strategy: Option<Strategy>,
    pub estimator: Option<QuantileMethod>,
    pub follower: Option<FollowerVariant>,
    pub alpha: Option<f64>,
    pub inner_lr: Option<f64>,
    pub outer_lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub iterations: Option<usize>,
    pub second_order: Option<bool>,
    pub seed: Option<u64>,
    pub snapshot_every: Option<usize>,
    pub init_seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthName {
    Scott,
    Cdfrate,
    Fixed,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KdeSection {
    pub bandwidth: Option<BandwidthName>,
    /// Required with `bandwidth = "fixed"`.
    pub h: Option<f64>,
    pub grid_points: Option<usize>,
    pub root_tol: Option<f64>,
    pub max_root_iters: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub alpha: Option<f64>,
    pub test_tasks: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Exp1,
    /// Losses of a trained checkpoint on freshly sampled tasks.
    Model,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub distribution: Option<Distribution>,
    pub alphas: Option<Vec<f64>>,
    pub sizes: Option<Vec<usize>>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    /// Size of the loss pool for `distribution = "model"`.
    pub pool_size: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSection {
    pub batch_size: Option<usize>,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub batches: Option<usize>,
    pub reference_samples: Option<usize>,
    pub l_max: Option<f64>,
    pub seed: Option<u64>,
}

/// The file as written.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub benchmark: Benchmark,
    pub learner: Option<Learner>,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub kde: KdeSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub bound: BoundSection,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuantileBenchSpec {
    pub distribution: Distribution,
    pub alphas: Vec<f64>,
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub pool_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundSpec {
    pub batch_size: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub batches: usize,
    pub reference_samples: usize,
    /// `None`: the largest loss observed across the resampled batches.
    pub l_max: Option<f64>,
    pub seed: u64,
}

/// Every setting with defaults filled in.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub benchmark: Benchmark,
    pub learner: Learner,
    pub output_dir: PathBuf,
    pub train: TrainConfig,
    pub init_seed: u64,
    pub eval_alpha: f64,
    pub test_tasks: usize,
    pub bench: QuantileBenchSpec,
    pub bound: BoundSpec,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn resolve(self) -> Result<ExperimentConfig, CliError> {
        let b = self.benchmark;
        let mut train = b.default_train();
        let t = self.train;
        macro_rules! set {
            ($($field:ident),*) => {$(if let Some(v) = t.$field { train.$field = v; })*};
        }
        set!(strategy, estimator, follower, alpha, inner_lr, outer_lr, batch_size, iterations, second_order, seed, snapshot_every);
        train.learner = self.learner.unwrap_or(Learner::Maml);

        let k = self.kde;
        let defaults = KdeConfig::default();
        train.kde = KdeConfig {
            bandwidth_rule: match (k.bandwidth, k.h) {
                (None | Some(BandwidthName::Cdfrate), None) => BandwidthRule::CdfRate,
                (Some(BandwidthName::Scott), None) => BandwidthRule::Scott,
                (Some(BandwidthName::Fixed) | None, Some(h)) => BandwidthRule::Fixed(h),
                (Some(BandwidthName::Fixed), None) => {
                    return Err(config_err("kde.bandwidth = \"fixed\" needs kde.h"))
                }
                (Some(_), Some(_)) => return Err(config_err("kde.h only applies to a fixed bandwidth")),
            },
            grid_points: k.grid_points.unwrap_or(defaults.grid_points),
            root_tol: k.root_tol.unwrap_or(defaults.root_tol),
            max_root_iters: k.max_root_iters.unwrap_or(defaults.max_root_iters),
        };
        train.validate().map_err(|e| config_err(e.to_string()))?;

        let eval_alpha = self.eval.alpha.unwrap_or(train.alpha);
        if !(0.0..1.0).contains(&eval_alpha) {
            return Err(config_err(format!("eval.alpha = {eval_alpha} outside [0, 1)")));
        }
        let test_tasks = self.eval.test_tasks.unwrap_or(b.default_test_tasks());
        if test_tasks == 0 {
            return Err(config_err("eval.test_tasks must be positive"));
        }

        let q = self.bench;
        let bench = QuantileBenchSpec {
            distribution: q.distribution.unwrap_or(Distribution::Exp1),
            alphas: q.alphas.unwrap_or_else(|| vec![0.7]),
            sizes: q.sizes.unwrap_or_else(|| vec![25, 50, 100, 200, 400]),
            trials: q.trials.unwrap_or(1000),
            seed: q.seed.unwrap_or(train.seed),
            pool_size: q.pool_size.unwrap_or(100_000),
        };
        if bench.trials == 0 || bench.sizes.contains(&0) || bench.pool_size == 0 {
            return Err(config_err("bench trials, sizes and pool_size must be positive"));
        }

        let g = self.bound;
        let bound = BoundSpec {
            batch_size: g.batch_size.unwrap_or(200),
            alpha: g.alpha.unwrap_or(0.7),
            epsilon: g.epsilon.unwrap_or(0.05),
            batches: g.batches.unwrap_or(1000),
            reference_samples: g.reference_samples.unwrap_or(1_000_000),
            l_max: g.l_max,
            seed: g.seed.unwrap_or(train.seed),
        };
        if !(bound.epsilon > 0.0 && bound.epsilon < 1.0) || !(0.0..1.0).contains(&bound.alpha) {
            return Err(config_err("bound.epsilon must be in (0, 1) and bound.alpha in [0, 1)"));
        }
        if bound.batch_size < 2 || bound.batches == 0 || bound.reference_samples == 0 {
            return Err(config_err("bound.batch_size >= 2, batches and reference_samples > 0 required"));
        }

        Ok(ExperimentConfig {
            benchmark: b,
            learner: train.learner,
            output_dir: self.output_dir.unwrap_or_else(|| PathBuf::from("runs").join(b.name())),
            init_seed: t.init_seed.unwrap_or(train.seed),
            train,
            eval_alpha,
            test_tasks,
            bench,
            bound,
        })
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        ConfigFile::parse(&text)?.resolve()
    }

    pub fn for_benchmark(b: Benchmark) -> Self {
        ConfigFile {
            benchmark: b,
            learner: None,
            output_dir: None,
            train: Default::default(),
            kde: Default::default(),
            eval: Default::default(),
            bench: Default::default(),
            bound: Default::default(),
        }
        .resolve()
        .expect("benchmark defaults are valid")
    }

    /// `--seed` overrides the training seed and everything derived from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.init_seed = seed;
        self.bench.seed = seed;
        self.bound.seed = seed;
        self
    }

    pub fn arch(&self) -> Arch {
        let (x, y) = self.benchmark.io_dims();
        match (self.learner, self.benchmark) {
            (Learner::Cnp, _) => Arch::Cnp(CnpArch::new(x, y)),
            (Learner::Maml, Benchmark::Toy) => {
                Arch::Mlp(MlpArch::new(vec![2, 1], false).expect("valid toy architecture"))
            }
            (Learner::Maml, Benchmark::Sinusoid5 | Benchmark::Sinusoid10) => {
                Arch::Mlp(MlpArch::relu_mlp(x, 40, 2, y))
            }
            (Learner::Maml, _) => Arch::Mlp(MlpArch::relu_mlp(x, 128, 3, y)),
        }
    }

    pub fn train_source(&self) -> Box<dyn TaskSource> {
        self.task_source(self.train.seed)
    }

    /// Fresh training-distribution tasks under `seed`.
    pub fn task_source(&self, seed: u64) -> Box<dyn TaskSource> {
        match self.benchmark {
            Benchmark::Sinusoid5 | Benchmark::Sinusoid10 => Box::new(SinusoidSource {
                config: self.benchmark.sinusoid(),
                seed,
                mode: SinusoidMode::TrainMixture,
            }),
            Benchmark::Pendulum10 | Benchmark::Pendulum20 => Box::new(PendulumSource {
                config: self.benchmark.pendulum(),
                seed,
            }),
            Benchmark::Toy => Box::new(FixedTasks(quadratic_toy_tasks())),
        }
    }

    pub fn test_set(&self) -> Vec<TaskInstance> {
        match self.benchmark {
            Benchmark::Sinusoid5 | Benchmark::Sinusoid10 => {
                test_grid_sinusoid(&self.benchmark.sinusoid(), self.test_tasks).tasks
            }
            Benchmark::Pendulum10 | Benchmark::Pendulum20 => {
                test_grid_pendulum(&self.benchmark.pendulum(), self.test_tasks).tasks
            }
            Benchmark::Toy => quadratic_toy_tasks().into_iter().cycle().take(self.test_tasks).collect(),
        }
    }

    /// Canonical serialization: the input of [`Self::hash`] and the
    /// `config` table of the run manifest.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("resolved configs serialize")
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical_toml().as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
