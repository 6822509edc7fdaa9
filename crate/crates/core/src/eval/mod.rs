//! Test-time metrics, the quantile-error benchmark and diagnostics for the
//! training dynamics and tail-risk generalization.

mod diagnostics;
mod quantile;

pub use diagnostics::{
    asymptotic_gap_probes, bound_rhs, check_monotonic_trace, convergence_ratio,
    generalization_bound, linearity_in_q_check, BoundReport, GapReport,
};
pub use quantile::{quantile_benchmark, LossSource, QuantileErrorRow};

use rayon::prelude::*;
use thiserror::Error;

use crate::meta::{query_mse, Learner, MetaError};
use crate::params::ParamVector;
use crate::risk::{tail_mean, RiskError};
use crate::tasks::TaskInstance;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no finite losses to evaluate")]
    Empty,
    #[error("alpha = {0} is outside [0, 1)")]
    Alpha(f64),
    #[error("epsilon = {0} is outside (0, 1)")]
    Epsilon(f64),
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error(transparent)]
    Risk(#[from] RiskError),
}

/// Average, worst-case and tail metrics over a set of test tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub average: f64,
    pub worst: f64,
    /// Mean of the `ceil(N (1 - alpha))` largest losses.
    pub cvar: f64,
    pub alpha: f64,
    /// Number of finite losses that entered the metrics.
    pub n_tasks: usize,
    /// One entry per input task; non-finite values are kept here but
    /// excluded from the summary statistics.
    pub per_task_losses: Vec<f64>,
    pub n_nonfinite: usize,
}

/// Summary metrics of precomputed per-task losses.
pub fn metrics_from_losses(losses: Vec<f64>, alpha: f64) -> Result<MetricsReport, EvalError> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(EvalError::Alpha(alpha));
    }
    let finite: Vec<f64> = losses.iter().copied().filter(|l| l.is_finite()).collect();
    if finite.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = finite.len();
    Ok(MetricsReport {
        average: finite.iter().sum::<f64>() / n as f64,
        worst: finite.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        cvar: if alpha == 0.0 {
            finite.iter().sum::<f64>() / n as f64
        } else {
            tail_mean(&finite, alpha)
        },
        alpha,
        n_tasks: n,
        n_nonfinite: losses.len() - n,
        per_task_losses: losses,
    })
}

/// Adapts (MAML) or conditions (CNP) on each task's support set and scores
/// the query set by mean squared error.
pub fn evaluate(
    params: &ParamVector,
    learner: Learner,
    tasks: &[TaskInstance],
    alpha: f64,
    inner_lr: f64,
    workers: usize,
) -> Result<MetricsReport, EvalError> {
    if tasks.is_empty() {
        return Err(EvalError::Empty);
    }
    learner.check_arch(params.arch())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| EvalError::Contract(format!("thread pool: {e}")))?;
    let losses: Vec<Result<f64, MetaError>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|t| query_mse(params, t, learner, inner_lr))
            .collect()
    });
    let losses = losses.into_iter().collect::<Result<Vec<_>, _>>()?;
    metrics_from_losses(losses, alpha)
}
