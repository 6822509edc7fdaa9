//! The two-stage loop.
//!
//! Each iteration the leader looks at the batch of adapted task losses and
//! picks a reweighting of the batch (all tasks, the worst one, or the
//! screened tail); the follower then takes one gradient step on the
//! reweighted risk. Per-task losses and meta-gradients are computed in
//! parallel against a read-only snapshot of the parameters and reduced in
//! task order, so results do not depend on the worker count.

use rayon::prelude::*;

use super::learner::{task_loss_and_grad, task_loss_value};
use super::{FollowerVariant, MetaError, Strategy, TrainConfig};
use crate::params::ParamVector;
use crate::risk::{
    cvar_hinge_weights, screen_tasks, LeaderDecision, QuantileEstimate, QuantileMethod, RiskBatch,
};
use crate::tasks::{TaskInstance, TaskSource};

/// One iteration of the trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub losses: Vec<f64>,
    pub mean_loss: f64,
    pub xi_hat: f64,
    /// `F(q_t, theta_t)`: reweighted risk of the leader's choice before the
    /// update.
    pub leader_objective: f64,
    /// `F(q_t, theta_{t+1})`: the same reweighting after the update.
    pub follower_objective: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    /// `(iteration, parameters before that iteration's update)`; the last
    /// entry is the final parameters.
    pub snapshots: Vec<(usize, Vec<f64>)>,
}

/// Losses and meta-gradients of one batch.
#[derive(Clone, Debug)]
pub struct BatchEval {
    pub batch: RiskBatch,
    pub grads: Vec<Vec<f64>>,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, MetaError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| MetaError::Config(format!("thread pool: {e}")))
}

fn evaluate_batch(
    params: &ParamVector,
    tasks: &[TaskInstance],
    config: &TrainConfig,
    iteration: usize,
    pool: &rayon::ThreadPool,
) -> Result<BatchEval, MetaError> {
    let results: Vec<Result<(f64, Vec<f64>), MetaError>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|t| task_loss_and_grad(params, t, config.learner, config.inner_lr, config.second_order))
            .collect()
    });
    let mut losses = Vec::with_capacity(tasks.len());
    let mut grads = Vec::with_capacity(tasks.len());
    for (task, r) in tasks.iter().zip(results) {
        let (l, g) = r?;
        if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(MetaError::NonFinite {
                iteration,
                task_id: task.id,
            });
        }
        losses.push(l);
        grads.push(g);
    }
    let ids = tasks.iter().map(|t| t.id).collect();
    Ok(BatchEval {
        batch: RiskBatch::new(losses, ids)?,
        grads,
    })
}

fn batch_losses(
    params: &ParamVector,
    tasks: &[TaskInstance],
    config: &TrainConfig,
    iteration: usize,
    pool: &rayon::ThreadPool,
) -> Result<Vec<f64>, MetaError> {
    let results: Vec<Result<f64, MetaError>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|t| task_loss_value(params, t, config.learner, config.inner_lr))
            .collect()
    });
    tasks
        .iter()
        .zip(results)
        .map(|(task, r)| {
            let l = r?;
            if l.is_finite() {
                Ok(l)
            } else {
                Err(MetaError::NonFinite {
                    iteration,
                    task_id: task.id,
                })
            }
        })
        .collect()
}

/// Leader's best response to the current batch losses.
pub fn leader_step(batch: &RiskBatch, config: &TrainConfig) -> Result<LeaderDecision, MetaError> {
    match config.strategy {
        Strategy::Cvar => Ok(screen_tasks(batch, config.alpha, config.estimator, &config.kde)?),
        Strategy::Erm => Ok(LeaderDecision {
            quantile: QuantileEstimate {
                xi_hat: batch.min(),
                method: QuantileMethod::Mc,
                alpha: 0.0,
            },
            mask: vec![true; batch.len()],
            screened_count: batch.len(),
        }),
        Strategy::WorstCase => {
            let top = batch.rank_descending()[0];
            let mut mask = vec![false; batch.len()];
            mask[top] = true;
            Ok(LeaderDecision {
                quantile: QuantileEstimate {
                    xi_hat: batch.losses()[top],
                    method: QuantileMethod::Mc,
                    alpha: config.alpha,
                },
                mask,
                screened_count: 1,
            })
        }
    }
}

/// Weight of each task's meta-gradient in the follower's update.
///
/// ERM, worst-case and screening use the leader's distribution over the
/// batch; the hinge variant differentiates the CVaR hinge objective with
/// respect to each loss (`1/((1-alpha)B)` on losses at or above `xi`).
pub fn follower_weights(
    batch: &RiskBatch,
    decision: &LeaderDecision,
    config: &TrainConfig,
) -> Result<Vec<f64>, MetaError> {
    match (config.strategy, config.follower) {
        (Strategy::Cvar, FollowerVariant::Hinge) => Ok(cvar_hinge_weights(
            batch,
            decision.quantile.xi_hat,
            config.alpha,
        )?),
        _ => Ok(decision.tail_distribution()),
    }
}

fn apply_update(
    params: &ParamVector,
    grads: &[Vec<f64>],
    weights: &[f64],
    lr: f64,
) -> Result<ParamVector, MetaError> {
    let mut direction = vec![0.0; params.len()];
    for (g, &w) in grads.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (d, &gi) in direction.iter_mut().zip(g) {
            *d += w * gi;
        }
    }
    let next = params
        .values()
        .iter()
        .zip(&direction)
        .map(|(p, d)| p - lr * d)
        .collect();
    Ok(params.with_values(next)?)
}

fn weighted(losses: &[f64], q: &[f64]) -> f64 {
    losses.iter().zip(q).map(|(l, w)| l * w).sum()
}

/// Follower's best response: one SGD step on the reweighted meta-risk.
pub fn follower_step(
    model: &ParamVector,
    tasks: &[TaskInstance],
    decision: &LeaderDecision,
    config: &TrainConfig,
) -> Result<ParamVector, MetaError> {
    if decision.mask.len() != tasks.len() {
        return Err(MetaError::Config(format!(
            "decision covers {} tasks, batch has {}",
            decision.mask.len(),
            tasks.len()
        )));
    }
    let pool = pool(config.workers)?;
    let eval = evaluate_batch(model, tasks, config, 0, &pool)?;
    let weights = follower_weights(&eval.batch, decision, config)?;
    apply_update(model, &eval.grads, &weights, config.outer_lr)
}

/// Runs `config.iterations` leader/follower rounds from `init`.
pub fn train(
    config: &TrainConfig,
    source: &dyn TaskSource,
    init: ParamVector,
) -> Result<(ParamVector, TrainTrace), MetaError> {
    config.validate()?;
    config.learner.check_arch(init.arch())?;
    let pool = pool(config.workers)?;
    let mut params = init;
    let mut trace = TrainTrace::default();

    for t in 0..config.iterations {
        if config.snapshot_every > 0 && t % config.snapshot_every == 0 {
            trace.snapshots.push((t, params.values().to_vec()));
        }
        let tasks = source.batch(t, config.batch_size);
        let eval = evaluate_batch(&params, &tasks, config, t, &pool)?;
        let decision = leader_step(&eval.batch, config)?;
        let weights = follower_weights(&eval.batch, &decision, config)?;
        let next = apply_update(&params, &eval.grads, &weights, config.outer_lr)?;

        let q = decision.tail_distribution();
        let after = batch_losses(&next, &tasks, config, t, &pool)?;
        trace.records.push(TraceRecord {
            iter: t,
            mean_loss: eval.batch.mean(),
            xi_hat: decision.quantile.xi_hat,
            leader_objective: weighted(eval.batch.losses(), &q),
            follower_objective: weighted(&after, &q),
            losses: eval.batch.losses().to_vec(),
        });
        params = next;
    }
    trace.snapshots.push((config.iterations, params.values().to_vec()));
    Ok((params, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meta::Learner;
    use crate::params::{Arch, MlpArch};
    use crate::tasks::{quadratic_toy_tasks, FixedTasks, Samples, TaskParams};

    fn toy_config() -> TrainConfig {
        TrainConfig {
            learner: Learner::Maml,
            alpha: 0.5,
            inner_lr: 0.05,
            outer_lr: 0.05,
            batch_size: 4,
            iterations: 30,
            strategy: Strategy::Cvar,
            estimator: QuantileMethod::Mc,
            follower: FollowerVariant::Screening,
            second_order: true,
            seed: 0,
            kde: Default::default(),
            snapshot_every: 1,
            workers: 1,
        }
    }

    fn linear_init() -> ParamVector {
        ParamVector::new(vec![0.0, 0.0], Arch::Mlp(MlpArch::new(vec![2, 1], false).unwrap())).unwrap()
    }

    #[test]
    fn leader_examples() {
        let b = RiskBatch::from_losses(vec![1., 2., 3., 4.]).unwrap();
        let mut c = toy_config();
        assert_eq!(leader_step(&b, &c).unwrap().mask, vec![false, false, true, true]);
        c.strategy = Strategy::Erm;
        assert_eq!(leader_step(&b, &c).unwrap().mask, vec![true; 4]);
        c.strategy = Strategy::WorstCase;
        let w = RiskBatch::from_losses(vec![1., 4., 4.]).unwrap();
        assert_eq!(leader_step(&w, &c).unwrap().mask, vec![false, true, false]);
    }

    #[test]
    fn zero_iterations_return_init() {
        let mut c = toy_config();
        c.iterations = 0;
        let (p, trace) = train(&c, &FixedTasks(quadratic_toy_tasks()), linear_init()).unwrap();
        assert_eq!(p, linear_init());
        assert!(trace.records.is_empty());
    }

    #[test]
    fn screening_update_uses_only_the_harder_task() {
        let tasks: Vec<_> = quadratic_toy_tasks().into_iter().take(2).collect();
        let p = ParamVector::new(vec![0.3, -0.2], linear_init().arch().clone()).unwrap();
        let c = TrainConfig {
            batch_size: 2,
            ..toy_config()
        };
        let (l0, _) = task_loss_and_grad(&p, &tasks[0], c.learner, c.inner_lr, true).unwrap();
        let (l1, g1) = task_loss_and_grad(&p, &tasks[1], c.learner, c.inner_lr, true).unwrap();
        assert!(l1 > l0);
        let batch = RiskBatch::from_losses(vec![l0, l1]).unwrap();
        let d = leader_step(&batch, &c).unwrap();
        assert_eq!(d.mask, vec![false, true]);
        let next = follower_step(&p, &tasks, &d, &c).unwrap();
        for i in 0..2 {
            let want = p.values()[i] - c.outer_lr * g1[i];
            assert!((next.values()[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn single_task_batch_is_plain_maml() {
        let tasks: Vec<_> = quadratic_toy_tasks().into_iter().take(1).collect();
        let p = ParamVector::new(vec![0.1, 0.4], linear_init().arch().clone()).unwrap();
        let (l, g) = task_loss_and_grad(&p, &tasks[0], Learner::Maml, 0.05, true).unwrap();
        for follower in [FollowerVariant::Screening, FollowerVariant::Hinge] {
            let c = TrainConfig {
                batch_size: 1,
                follower,
                ..toy_config()
            };
            let b = RiskBatch::from_losses(vec![l]).unwrap();
            let d = leader_step(&b, &c).unwrap();
            let next = follower_step(&p, &tasks, &d, &c).unwrap();
            for i in 0..2 {
                let scale = if follower == FollowerVariant::Hinge { 1.0 / (1.0 - c.alpha) } else { 1.0 };
                let want = p.values()[i] - c.outer_lr * scale * g[i];
                assert!((next.values()[i] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn nan_loss_aborts_with_task_id() {
        let mut bad = quadratic_toy_tasks();
        let mut q = Samples::new(2, 1);
        q.push(&[1.0, 0.0], &[f64::NAN]);
        bad[2] = crate::tasks::TaskInstance {
            id: 2,
            params: TaskParams::Fixed,
            support: bad[2].support.clone(),
            query: q,
        };
        let err = train(&toy_config(), &FixedTasks(bad), linear_init()).unwrap_err();
        assert!(matches!(err, MetaError::NonFinite { iteration: 0, task_id: 2 }));
    }

    #[test]
    fn trace_is_reproducible_and_ordered() {
        let c = toy_config();
        let src = FixedTasks(quadratic_toy_tasks());
        let (pa, ta) = train(&c, &src, linear_init()).unwrap();
        let (pb, tb) = train(&TrainConfig { workers: 3, ..c.clone() }, &src, linear_init()).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(ta, tb);
        assert!(ta.records.windows(2).all(|w| w[0].iter < w[1].iter));
        assert_eq!(ta.snapshots.len(), c.iterations + 1);
    }
}
