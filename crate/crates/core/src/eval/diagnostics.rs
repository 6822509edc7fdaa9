//! Numerical probes of the training dynamics and of tail-risk
//! generalization. None of these estimate the underlying Lipschitz or
//! curvature constants; where a quantity needs one, an empirical surrogate is
//! reported and named as such.

use super::EvalError;
use crate::meta::TrainTrace;
use crate::risk::{tail_count, tail_mean, var_mc, RiskBatch};

/// Iterations `t` at which the post-update objective rose above the
/// previous iteration's by more than `tol`.
pub fn check_monotonic_trace(trace: &TrainTrace, tol: f64) -> Vec<usize> {
    trace
        .records
        .windows(2)
        .filter(|w| w[1].follower_objective > w[0].follower_objective + tol)
        .map(|w| w[1].iter)
        .collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Successive contraction ratios `|theta_{t+1} - ref| / |theta_t - ref|`.
///
/// Snapshots within `1e-15` of the reference (typically the reference
/// itself, when it is the last snapshot) are dropped first; at least three
/// must remain.
pub fn convergence_ratio(snapshots: &[Vec<f64>], reference: &[f64]) -> Result<Vec<f64>, EvalError> {
    if snapshots.iter().any(|s| s.len() != reference.len()) {
        return Err(EvalError::Contract("snapshot and reference lengths differ".into()));
    }
    let d: Vec<f64> = snapshots
        .iter()
        .map(|s| distance(s, reference))
        .filter(|&d| d > 1e-15)
        .collect();
    if d.len() < 3 {
        return Err(EvalError::Contract(format!(
            "need at least 3 snapshots away from the reference, found {}",
            d.len()
        )));
    }
    Ok(d.windows(2).map(|w| w[1] / w[0]).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    /// `(1/B) sum_i delta_i l_i` over the screened tail.
    pub empirical_tail_risk: f64,
    /// `(1/B) sum_i w_i l_i` with importance ratio `1/(1-alpha)` on the tail.
    pub weighted_estimate: f64,
    pub bound_rhs: f64,
    pub epsilon: f64,
    /// Sample variance of the screened losses.
    pub variance_term: f64,
    pub l_max: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub reference_tail_risk: f64,
    pub holds: bool,
}

/// Right-hand side of the tail-risk generalization bound.
pub fn bound_rhs(
    empirical_tail_risk: f64,
    variance: f64,
    alpha: f64,
    epsilon: f64,
    l_max: f64,
    b: usize,
) -> f64 {
    let b = b as f64;
    let log_term = (1.0 / epsilon).ln();
    let dev = (2.0 * (alpha / (1.0 - alpha) * l_max * l_max + variance) * log_term / b).sqrt();
    let bias = l_max / b * (2.0 * log_term + 3.0 * alpha * b) / (3.0 * (1.0 - alpha));
    empirical_tail_risk + dev + bias
}

/// Evaluates the bound on one batch of losses and compares it with a tail
/// risk supplied from a large independent sample.
pub fn generalization_bound(
    losses: &[f64],
    alpha: f64,
    epsilon: f64,
    l_max: f64,
    reference_tail_risk: f64,
) -> Result<BoundReport, EvalError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(EvalError::Epsilon(epsilon));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(EvalError::Alpha(alpha));
    }
    let b = losses.len();
    if b < 2 {
        return Err(EvalError::Contract("the bound needs at least two losses".into()));
    }
    let batch = RiskBatch::from_losses(losses.to_vec())?;
    if !(l_max >= batch.max()) {
        return Err(EvalError::Domain(format!(
            "l_max = {l_max} is below the largest loss {}",
            batch.max()
        )));
    }
    let k = tail_count(b, alpha);
    let tail: Vec<f64> = batch.rank_descending()[..k].iter().map(|&i| losses[i]).collect();
    let tail_sum: f64 = tail.iter().sum();
    let variance = if k >= 2 {
        let m = tail_sum / k as f64;
        tail.iter().map(|l| (l - m).powi(2)).sum::<f64>() / (k - 1) as f64
    } else {
        0.0
    };
    let empirical = tail_sum / b as f64;
    let rhs = bound_rhs(empirical, variance, alpha, epsilon, l_max, b);
    Ok(BoundReport {
        empirical_tail_risk: empirical,
        weighted_estimate: tail_sum / (1.0 - alpha) / b as f64,
        bound_rhs: rhs,
        epsilon,
        variance_term: variance,
        l_max,
        alpha,
        batch_size: b,
        reference_tail_risk,
        holds: reference_tail_risk <= rhs,
    })
}

/// Order-flip statistics between the trained and the reference model.
#[derive(Clone, Debug, PartialEq)]
pub struct GapReport {
    /// Fraction of tasks below the reference VaR but in the trained tail.
    pub p_t1: f64,
    /// Fraction of tasks in the reference tail but below the trained VaR.
    pub p_t2: f64,
    pub var_meta: f64,
    pub var_star: f64,
    /// Tail-mean of the trained model minus that of the reference.
    pub cvar_gap: f64,
    /// Largest per-task loss change divided by the parameter distance: an
    /// empirical surrogate for the loss Lipschitz constant, not the
    /// constant itself. `None` without a positive parameter distance.
    pub beta_tau_estimate: Option<f64>,
}

pub fn asymptotic_gap_probes(
    meta_losses: &[f64],
    star_losses: &[f64],
    alpha: f64,
    param_distance: Option<f64>,
) -> Result<GapReport, EvalError> {
    if meta_losses.len() != star_losses.len() {
        return Err(EvalError::Contract(format!(
            "loss vectors cover {} and {} tasks",
            meta_losses.len(),
            star_losses.len()
        )));
    }
    let var_meta = var_mc(&RiskBatch::from_losses(meta_losses.to_vec())?, alpha)?.xi_hat;
    let var_star = var_mc(&RiskBatch::from_losses(star_losses.to_vec())?, alpha)?.xi_hat;
    let n = meta_losses.len() as f64;
    let (mut t1, mut t2) = (0usize, 0usize);
    for (&m, &s) in meta_losses.iter().zip(star_losses) {
        if s < var_star && m >= var_meta {
            t1 += 1;
        }
        if m < var_meta && s >= var_star {
            t2 += 1;
        }
    }
    let max_change = meta_losses
        .iter()
        .zip(star_losses)
        .map(|(m, s)| (m - s).abs())
        .fold(0.0, f64::max);
    Ok(GapReport {
        p_t1: t1 as f64 / n,
        p_t2: t2 as f64 / n,
        var_meta,
        var_star,
        cvar_gap: tail_mean(meta_losses, alpha) - tail_mean(star_losses, alpha),
        beta_tau_estimate: param_distance.filter(|&d| d > 0.0).map(|d| max_change / d),
    })
}

fn check_distribution(q: &[f64], n: usize) -> Result<(), EvalError> {
    if q.len() != n {
        return Err(EvalError::Contract(format!("{} weights for {n} losses", q.len())));
    }
    let total: f64 = q.iter().sum();
    if q.iter().any(|&w| !(w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(EvalError::Domain(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// Largest deviation of `F(l q1 + (1-l) q2)` from `l F(q1) + (1-l) F(q2)`
/// over the given mixing coefficients, where `F(q) = sum_i q_i loss_i`.
pub fn linearity_in_q_check(
    losses: &[f64],
    q1: &[f64],
    q2: &[f64],
    lambdas: &[f64],
) -> Result<f64, EvalError> {
    check_distribution(q1, losses.len())?;
    check_distribution(q2, losses.len())?;
    let f = |q: &[f64]| q.iter().zip(losses).map(|(w, l)| w * l).sum::<f64>();
    let (f1, f2) = (f(q1), f(q2));
    let mut worst: f64 = 0.0;
    for &lam in lambdas {
        if !(0.0..=1.0).contains(&lam) {
            return Err(EvalError::Domain(format!("mixing coefficient {lam} outside [0, 1]")));
        }
        let mix: Vec<f64> = q1.iter().zip(q2).map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
        worst = worst.max((f(&mix) - (lam * f1 + (1.0 - lam) * f2)).abs());
    }
    Ok(worst)
}
