//! Per-task meta-risk for the two learners.
//!
//! MAML adapts with one gradient step on the support set and is scored by
//! the query MSE of the adapted parameters. CNP conditions on the mean-pooled
//! support representation and is scored by the Gaussian negative
//! log-likelihood of the query targets.

use serde::{Deserialize, Serialize};

use super::MetaError;
use crate::autodiff::{forward_mlp, Graph, Tensor, Var};
use crate::params::{Arch, CnpArch, MlpArch, ParamVector};
use crate::tasks::{Samples, TaskInstance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Learner {
    Maml,
    Cnp,
}

impl Learner {
    pub fn check_arch(self, arch: &Arch) -> Result<(), MetaError> {
        match (self, arch) {
            (Learner::Maml, Arch::Mlp(_)) | (Learner::Cnp, Arch::Cnp(_)) => Ok(()),
            _ => Err(MetaError::Config(format!(
                "{self:?} learner cannot use a {arch:?} architecture"
            ))),
        }
    }
}

/// Mean squared error over every entry.
pub fn mse(g: &mut Graph, pred: Var, target: Var) -> Result<Var, MetaError> {
    let d = g.sub(pred, target)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// Mean Gaussian negative log-likelihood of `target` under
/// `N(mean, exp(log_var))`.
pub fn gaussian_nll(g: &mut Graph, mean: Var, log_var: Var, target: Var) -> Result<Var, MetaError> {
    let d = g.sub(mean, target)?;
    let sq = g.square(d);
    let neg = g.scale(log_var, -1.0);
    let precision = g.exp(neg);
    let weighted = g.mul(sq, precision)?;
    let s = g.add(log_var, weighted)?;
    let half = g.scale(s, 0.5);
    let nll = g.add_const(half, 0.5 * (2.0 * std::f64::consts::PI).ln());
    Ok(g.mean(nll))
}

/// One gradient step on the support loss: `theta - lr * grad`.
///
/// With `second_order` the step stays differentiable with respect to
/// `theta`; otherwise the support gradient is treated as a constant.
pub fn inner_adapt(
    g: &mut Graph,
    theta: Var,
    arch: &MlpArch,
    support: &Samples,
    inner_lr: f64,
    second_order: bool,
) -> Result<Var, MetaError> {
    if support.is_empty() {
        return Err(MetaError::Config("empty support set".into()));
    }
    let x = g.constant(support.x_tensor());
    let y = g.constant(support.y_tensor());
    let pred = forward_mlp(g, theta, 0, arch, x)?;
    let loss = mse(g, pred, y)?;
    let grad = g.grad(loss, &[theta], second_order)?.vars[0];
    let step = g.scale(grad, inner_lr);
    Ok(g.sub(theta, step)?)
}

fn maml_query_prediction(
    g: &mut Graph,
    theta: Var,
    arch: &MlpArch,
    task: &TaskInstance,
    inner_lr: f64,
    second_order: bool,
) -> Result<Var, MetaError> {
    let adapted = inner_adapt(g, theta, arch, &task.support, inner_lr, second_order)?;
    let xq = g.constant(task.query.x_tensor());
    Ok(forward_mlp(g, adapted, 0, arch, xq)?)
}

/// CNP predictive mean and log-variance on the query inputs.
pub fn cnp_predict(
    g: &mut Graph,
    theta: Var,
    arch: &CnpArch,
    context: &Samples,
    targets_x: &Samples,
) -> Result<(Var, Var), MetaError> {
    let enc = arch.encoder();
    let dec = arch.decoder();
    let xs = g.constant(context.x_tensor());
    let ys = g.constant(context.y_tensor());
    let pairs = g.concat_cols(xs, ys)?;
    let r = forward_mlp(g, theta, 0, &enc, pairs)?;
    let z = g.mean_rows(r)?;
    let zq = g.broadcast_rows(z, targets_x.len())?;
    let xq = g.constant(targets_x.x_tensor());
    let dec_in = g.concat_cols(zq, xq)?;
    let out = forward_mlp(g, theta, enc.param_count(), &dec, dec_in)?;
    let mean = g.slice_cols(out, 0, arch.y_dim)?;
    let log_var = g.slice_cols(out, arch.y_dim, arch.y_dim)?;
    Ok((mean, log_var))
}

/// Graph-tracked meta-risk of one task at meta-parameters `theta`.
pub fn task_loss(
    g: &mut Graph,
    theta: Var,
    arch: &Arch,
    task: &TaskInstance,
    learner: Learner,
    inner_lr: f64,
    second_order: bool,
) -> Result<Var, MetaError> {
    learner.check_arch(arch)?;
    match arch {
        Arch::Mlp(a) => {
            let pred = maml_query_prediction(g, theta, a, task, inner_lr, second_order)?;
            let yq = g.constant(task.query.y_tensor());
            mse(g, pred, yq)
        }
        Arch::Cnp(a) => {
            let (mean, log_var) = cnp_predict(g, theta, a, &task.support, &task.query)?;
            let yq = g.constant(task.query.y_tensor());
            gaussian_nll(g, mean, log_var, yq)
        }
    }
}

/// Meta-risk and its gradient with respect to the meta-parameters.
pub fn task_loss_and_grad(
    params: &ParamVector,
    task: &TaskInstance,
    learner: Learner,
    inner_lr: f64,
    second_order: bool,
) -> Result<(f64, Vec<f64>), MetaError> {
    let mut g = Graph::new();
    let theta = g.param(Tensor::vector(params.values().to_vec()));
    let loss = task_loss(&mut g, theta, params.arch(), task, learner, inner_lr, second_order)?;
    let grad = g.grad(loss, &[theta], false)?.vars[0];
    Ok((g.item(loss), g.value(grad).data().to_vec()))
}

/// Meta-risk value only.
pub fn task_loss_value(
    params: &ParamVector,
    task: &TaskInstance,
    learner: Learner,
    inner_lr: f64,
) -> Result<f64, MetaError> {
    let mut g = Graph::new();
    let theta = g.param(Tensor::vector(params.values().to_vec()));
    let loss = task_loss(&mut g, theta, params.arch(), task, learner, inner_lr, false)?;
    Ok(g.item(loss))
}

/// Query mean squared error after adaptation (MAML) or conditioning (CNP,
/// using the predictive mean). This is the evaluation metric for both.
pub fn query_mse(
    params: &ParamVector,
    task: &TaskInstance,
    learner: Learner,
    inner_lr: f64,
) -> Result<f64, MetaError> {
    learner.check_arch(params.arch())?;
    let mut g = Graph::new();
    let theta = g.param(Tensor::vector(params.values().to_vec()));
    let pred = match params.arch() {
        Arch::Mlp(a) => maml_query_prediction(&mut g, theta, a, task, inner_lr, false)?,
        Arch::Cnp(a) => cnp_predict(&mut g, theta, a, &task.support, &task.query)?.0,
    };
    let yq = g.constant(task.query.y_tensor());
    let loss = mse(&mut g, pred, yq)?;
    Ok(g.item(loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check;
    use crate::tasks::TaskParams;

    fn toy_task() -> TaskInstance {
        let mut s = Samples::new(1, 1);
        s.push(&[1.0], &[2.0]);
        TaskInstance {
            id: 0,
            params: TaskParams::Fixed,
            support: s.clone(),
            query: s,
        }
    }

    fn linear() -> ParamVector {
        ParamVector::new(vec![0.0], Arch::Mlp(MlpArch::new(vec![1, 1], false).unwrap())).unwrap()
    }

    #[test]
    fn inner_step_on_linear_toy() {
        let task = toy_task();
        let arch = MlpArch::new(vec![1, 1], false).unwrap();
        let mut g = Graph::new();
        let t = g.param(Tensor::vector(vec![0.0]));
        let adapted = inner_adapt(&mut g, t, &arch, &task.support, 0.1, true).unwrap();
        assert!((g.value(adapted).data()[0] - 0.4).abs() < 1e-15);
        // zero step leaves theta untouched
        let same = inner_adapt(&mut g, t, &arch, &task.support, 0.0, true).unwrap();
        assert_eq!(g.value(same).data(), &[0.0]);
    }

    #[test]
    fn inner_step_at_stationary_point() {
        let task = toy_task();
        let arch = MlpArch::new(vec![1, 1], false).unwrap();
        let mut g = Graph::new();
        let t = g.param(Tensor::vector(vec![2.0]));
        let adapted = inner_adapt(&mut g, t, &arch, &task.support, 0.3, true).unwrap();
        assert_eq!(g.value(adapted).data(), &[2.0]);
    }

    #[test]
    fn maml_toy_loss_and_meta_gradients() {
        let task = toy_task();
        let p = linear();
        let (loss, g2) = task_loss_and_grad(&p, &task, Learner::Maml, 0.1, true).unwrap();
        assert!((loss - 2.56).abs() < 1e-12);
        assert!((g2[0] + 2.56).abs() < 1e-12);
        let (_, g1) = task_loss_and_grad(&p, &task, Learner::Maml, 0.1, false).unwrap();
        assert!((g1[0] + 3.2).abs() < 1e-12);

        let f = |x: &[f64]| task_loss_value(&p.with_values(x.to_vec()).unwrap(), &task, Learner::Maml, 0.1).unwrap();
        let r = finite_difference_check(f, &[0.0], &g2, 1e-5, 1e-8).unwrap();
        assert!(r.max_rel_error < 1e-8);
        assert!((r.numeric[0] + 2.56).abs() < 1e-8);
    }

    #[test]
    fn fitted_model_has_zero_loss() {
        let task = toy_task();
        let p = linear().with_values(vec![2.0]).unwrap();
        assert_eq!(task_loss_value(&p, &task, Learner::Maml, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_nll_at_unit_variance() {
        let mut g = Graph::new();
        let m = g.constant(Tensor::matrix(1, 1, vec![2.0]).unwrap());
        let lv = g.constant(Tensor::matrix(1, 1, vec![0.0]).unwrap());
        let y = g.constant(Tensor::matrix(1, 1, vec![2.0]).unwrap());
        let nll = gaussian_nll(&mut g, m, lv, y).unwrap();
        assert!((g.item(nll) - 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn cnp_loss_ignores_support_order() {
        use crate::tasks::{sinusoid_task, SinusoidConfig, SinusoidMode};
        let cfg = SinusoidConfig::with_shots(10);
        let task = sinusoid_task(&cfg, 2, 0, SinusoidMode::TestUniform);
        let p = ParamVector::init(Arch::Cnp(CnpArch::new(1, 1)), 4);
        let base = task_loss_value(&p, &task, Learner::Cnp, 0.0).unwrap();
        let mut shuffled = task.clone();
        let perm: Vec<usize> = (0..10).rev().collect();
        shuffled.support = task.support.permuted(&perm);
        let other = task_loss_value(&p, &shuffled, Learner::Cnp, 0.0).unwrap();
        assert!((base - other).abs() <= 1e-12);
    }

    #[test]
    fn cnp_gradient_matches_finite_differences() {
        use crate::tasks::{sinusoid_task, SinusoidConfig, SinusoidMode};
        let arch = CnpArch { x_dim: 1, y_dim: 1, hidden: 6, repr: 5 };
        let task = sinusoid_task(&SinusoidConfig::default(), 3, 1, SinusoidMode::TestUniform);
        let p = ParamVector::init(Arch::Cnp(arch), 9);
        let (_, grad) = task_loss_and_grad(&p, &task, Learner::Cnp, 0.0, false).unwrap();
        let f = |x: &[f64]| task_loss_value(&p.with_values(x.to_vec()).unwrap(), &task, Learner::Cnp, 0.0).unwrap();
        let r = finite_difference_check(f, p.values(), &grad, 1e-6, 1e-4).unwrap();
        assert!(r.max_rel_error < 1e-5, "{} {} {} {}", r.max_rel_error, r.worst_coord, r.analytic[r.worst_coord], r.numeric[r.worst_coord]);
    }

    #[test]
    fn learner_arch_mismatch() {
        let p = linear();
        assert!(task_loss_value(&p, &toy_task(), Learner::Cnp, 0.1).is_err());
    }
}
