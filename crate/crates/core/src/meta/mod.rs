//! Meta-learners and the two-stage leader/follower training loop.

mod checkpoint;
mod learner;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use learner::{
    cnp_predict, gaussian_nll, inner_adapt, mse, query_mse, task_loss, task_loss_and_grad,
    task_loss_value, Learner,
};
pub use train::{
    follower_step, follower_weights, leader_step, train, BatchEval, TraceRecord, TrainTrace,
};

pub use crate::params::{Arch, CnpArch, MlpArch, ParamVector};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::params::ParamError;
use crate::risk::{KdeConfig, QuantileMethod, RiskError};
use crate::tasks::TaskError;

#[derive(Debug, Error)]
pub enum MetaError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("non-finite loss or gradient at iteration {iteration} for task {task_id}")]
    NonFinite { iteration: usize, task_id: u64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which task distribution the follower optimises against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Plain average over the batch.
    Erm,
    /// Only the single highest-loss task.
    WorstCase,
    /// Tail of the batch above the estimated value-at-risk.
    Cvar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FollowerVariant {
    /// Mean loss over the screened tasks.
    Screening,
    /// `xi + (1/(1-alpha)) mean([l - xi]^+)` over the whole batch.
    Hinge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learner: Learner,
    pub alpha: f64,
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub strategy: Strategy,
    pub estimator: QuantileMethod,
    pub follower: FollowerVariant,
    pub second_order: bool,
    pub seed: u64,
    pub kde: KdeConfig,
    /// Parameter snapshot cadence in iterations; 0 keeps only the final one.
    pub snapshot_every: usize,
    /// Worker threads for per-task work; 0 uses every available core.
    #[serde(skip, default = "one_worker")]
    pub workers: usize,
}

fn one_worker() -> usize {
    1
}

impl Default for TrainConfig {
    /// 5-shot sinusoid settings.
    fn default() -> Self {
        Self {
            learner: Learner::Maml,
            alpha: 0.7,
            inner_lr: 0.01,
            outer_lr: 0.001,
            batch_size: 50,
            iterations: 70_000,
            strategy: Strategy::Cvar,
            estimator: QuantileMethod::Kde,
            follower: FollowerVariant::Hinge,
            second_order: true,
            seed: 0,
            kde: KdeConfig::default(),
            snapshot_every: 0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MetaError> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(MetaError::Config(format!("alpha = {} outside [0, 1)", self.alpha)));
        }
        if !(self.inner_lr >= 0.0 && self.inner_lr.is_finite()) {
            return Err(MetaError::Config(format!("inner_lr = {}", self.inner_lr)));
        }
        if !(self.outer_lr > 0.0 && self.outer_lr.is_finite()) {
            return Err(MetaError::Config(format!("outer_lr = {}", self.outer_lr)));
        }
        if self.batch_size == 0 {
            return Err(MetaError::Config("batch_size must be positive".into()));
        }
        self.kde.validate()?;
        Ok(())
    }
}
