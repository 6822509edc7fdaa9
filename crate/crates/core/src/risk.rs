//! Tail-risk machinery: value-at-risk estimation from a batch of task
//! losses, the CVaR hinge objective and tail-task screening.
//!
//! Two quantile estimators are provided. The Monte Carlo one is an order
//! statistic of the batch. The kernel one inverts the Gaussian-kernel
//! smoothed CDF `F(l) = (1/B) sum_i Phi((l - l_i) / h)` by bracketed
//! root-finding on `[min, max]`, falling back to a cumulative grid when the
//! bracket holds no sign change.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("alpha = {0} is outside [0, 1)")]
    Alpha(f64),
    #[error("empty loss batch")]
    Empty,
    #[error("non-finite loss {value} for task {task_id}")]
    NonFinite { task_id: u64, value: f64 },
    #[error("{losses} losses but {ids} task ids")]
    Mismatch { losses: usize, ids: usize },
    #[error("bandwidth must be positive, got {0}")]
    Bandwidth(f64),
    #[error("degenerate batch: bandwidth needs at least two distinct losses")]
    DegenerateBandwidth,
    #[error("(1 - alpha) * B = {0} is not an integer; use the hinge form")]
    NonIntegerTail(f64),
    #[error("invalid KDE configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Per-task meta-risk values of one sampled batch.
#[derive(Clone, Debug, PartialEq)]
pub struct RiskBatch {
    losses: Vec<f64>,
    task_ids: Vec<u64>,
}

impl RiskBatch {
    pub fn new(losses: Vec<f64>, task_ids: Vec<u64>) -> Result<Self, RiskError> {
        if losses.is_empty() {
            return Err(RiskError::Empty);
        }
        if losses.len() != task_ids.len() {
            return Err(RiskError::Mismatch {
                losses: losses.len(),
                ids: task_ids.len(),
            });
        }
        if let Some((&value, &task_id)) = losses
            .iter()
            .zip(&task_ids)
            .find(|(v, _)| !v.is_finite())
        {
            return Err(RiskError::NonFinite { task_id, value });
        }
        Ok(Self { losses, task_ids })
    }

    /// Batch with ids `0..B`.
    pub fn from_losses(losses: Vec<f64>) -> Result<Self, RiskError> {
        let ids = (0..losses.len() as u64).collect();
        Self::new(losses, ids)
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn task_ids(&self) -> &[u64] {
        &self.task_ids
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.losses.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.losses.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.len() as f64
    }

    /// Indices ordered by descending loss, ties by ascending task id.
    pub fn rank_descending(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.losses[b]
                .total_cmp(&self.losses[a])
                .then(self.task_ids[a].cmp(&self.task_ids[b]))
        });
        idx
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantileMethod {
    Mc,
    Kde,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantileEstimate {
    pub xi_hat: f64,
    pub method: QuantileMethod,
    pub alpha: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthRule {
    /// `sigma * B^(-1/5)`, the density-estimation rate.
    Scott,
    /// `sigma * B^(-1/3)`, the rate that balances bias and variance of a
    /// smoothed CDF, and therefore of its quantiles.
    CdfRate,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeConfig {
    pub bandwidth_rule: BandwidthRule,
    pub grid_points: usize,
    pub root_tol: f64,
    pub max_root_iters: usize,
}

impl Default for KdeConfig {
    fn default() -> Self {
        Self {
            bandwidth_rule: BandwidthRule::CdfRate,
            grid_points: 1000,
            root_tol: 1e-10,
            max_root_iters: 200,
        }
    }
}

impl KdeConfig {
    pub fn validate(&self) -> Result<(), RiskError> {
        if let BandwidthRule::Fixed(h) = self.bandwidth_rule {
            if !(h > 0.0) {
                return Err(RiskError::Bandwidth(h));
            }
        }
        if self.grid_points < 2 {
            return Err(RiskError::Config("grid_points must be at least 2".into()));
        }
        if !(self.root_tol > 0.0) || self.max_root_iters == 0 {
            return Err(RiskError::Config("root_tol and max_root_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of the leader's move: the quantile and the screened tail.
#[derive(Clone, Debug, PartialEq)]
pub struct LeaderDecision {
    pub quantile: QuantileEstimate,
    pub mask: Vec<bool>,
    pub screened_count: usize,
}

impl LeaderDecision {
    /// Uniform weights over the screened tasks, i.e. the leader's
    /// reweighted task distribution.
    pub fn tail_distribution(&self) -> Vec<f64> {
        let w = 1.0 / self.screened_count as f64;
        self.mask.iter().map(|&m| if m { w } else { 0.0 }).collect()
    }
}

fn check_alpha(alpha: f64) -> Result<(), RiskError> {
    if (0.0..1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(RiskError::Alpha(alpha))
    }
}

/// Number of tail tasks `ceil(B (1 - alpha))`, clamped to `[1, B]`.
///
/// The product is nudged down by `1e-9` before rounding up: `50 * (1 - 0.7)`
/// evaluates to `15.000000000000002` in floating point.
pub fn tail_count(b: usize, alpha: f64) -> usize {
    let k = (b as f64 * (1.0 - alpha) - 1e-9).ceil() as usize;
    k.clamp(1, b)
}

/// Crude Monte Carlo value-at-risk: the `K`-th largest loss with
/// `K = ceil(B (1 - alpha))`.
pub fn var_mc(batch: &RiskBatch, alpha: f64) -> Result<QuantileEstimate, RiskError> {
    check_alpha(alpha)?;
    let k = tail_count(batch.len(), alpha);
    let order = batch.rank_descending();
    Ok(QuantileEstimate {
        xi_hat: batch.losses[order[k - 1]],
        method: QuantileMethod::Mc,
        alpha,
    })
}

pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Gaussian-kernel smoothed CDF of the batch at `l`.
pub fn kde_cdf(batch: &RiskBatch, h: f64, l: f64) -> Result<f64, RiskError> {
    if !(h > 0.0) {
        return Err(RiskError::Bandwidth(h));
    }
    Ok(kde_cdf_raw(batch.losses(), h, l))
}

fn kde_cdf_raw(losses: &[f64], h: f64, l: f64) -> f64 {
    losses.iter().map(|&x| std_normal_cdf((l - x) / h)).sum::<f64>() / losses.len() as f64
}

fn kde_pdf_raw(losses: &[f64], h: f64, l: f64) -> f64 {
    losses.iter().map(|&x| std_normal_pdf((l - x) / h)).sum::<f64>() / (losses.len() as f64 * h)
}

fn sample_std(losses: &[f64]) -> Option<f64> {
    let n = losses.len();
    if n < 2 {
        return None;
    }
    let mean = losses.iter().sum::<f64>() / n as f64;
    let var = losses.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    (sd > 0.0 && sd.is_finite()).then_some(sd)
}

/// Scott's rule `h = sigma * B^(-1/5)` with the Bessel-corrected sample
/// standard deviation.
pub fn bandwidth_scott(batch: &RiskBatch) -> Result<f64, RiskError> {
    let sd = sample_std(batch.losses()).ok_or(RiskError::DegenerateBandwidth)?;
    Ok(sd * (batch.len() as f64).powf(-0.2))
}

pub fn bandwidth(batch: &RiskBatch, rule: BandwidthRule) -> Result<f64, RiskError> {
    match rule {
        BandwidthRule::Scott => bandwidth_scott(batch),
        BandwidthRule::CdfRate => {
            let sd = sample_std(batch.losses()).ok_or(RiskError::DegenerateBandwidth)?;
            Ok(sd * (batch.len() as f64).powf(-1.0 / 3.0))
        }
        BandwidthRule::Fixed(h) if h > 0.0 => Ok(h),
        BandwidthRule::Fixed(h) => Err(RiskError::Bandwidth(h)),
    }
}

/// Brent's method on a bracket with `f(lo) * f(hi) <= 0`.
fn brent(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64, max_iter: usize) -> Option<f64> {
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol1 || fb == 0.0 {
            return Some(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = d;
            }
        } else {
            d = m;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(m) };
        fb = f(b);
    }
    None
}

/// Kernel-density value-at-risk.
///
/// Solves `F_kde(xi) = alpha` on `[min, max]`. Without a sign change there
/// (or if the iteration budget runs out) the density is evaluated on
/// `grid_points` equally spaced values, normalised by its cumulative sum,
/// and the first grid value whose CDF reaches `alpha` is returned. A batch
/// with zero spread falls back to [`var_mc`].
pub fn var_kde(
    batch: &RiskBatch,
    alpha: f64,
    config: &KdeConfig,
) -> Result<QuantileEstimate, RiskError> {
    check_alpha(alpha)?;
    config.validate()?;
    let h = match bandwidth(batch, config.bandwidth_rule) {
        Ok(h) => h,
        Err(RiskError::DegenerateBandwidth) => return var_mc(batch, alpha),
        Err(e) => return Err(e),
    };
    let losses = batch.losses();
    let (lo, hi) = (batch.min(), batch.max());
    let est = |xi_hat| QuantileEstimate {
        xi_hat,
        method: QuantileMethod::Kde,
        alpha,
    };
    if hi > lo {
        let root = brent(
            |l| kde_cdf_raw(losses, h, l) - alpha,
            lo,
            hi,
            config.root_tol,
            config.max_root_iters,
        );
        if let Some(r) = root {
            return Ok(est(r.clamp(lo, hi)));
        }
    }
    Ok(est(grid_quantile(losses, h, alpha, lo, hi, config.grid_points)))
}

fn grid_quantile(losses: &[f64], h: f64, alpha: f64, lo: f64, hi: f64, n: usize) -> f64 {
    let step = (hi - lo) / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
    let pdf: Vec<f64> = xs.iter().map(|&x| kde_pdf_raw(losses, h, x)).collect();
    let total: f64 = pdf.iter().sum();
    if !(total > 0.0) {
        return lo;
    }
    let mut acc = 0.0;
    for (x, p) in xs.iter().zip(&pdf) {
        acc += p;
        if acc / total >= alpha {
            return *x;
        }
    }
    hi
}

/// `xi + (1 / (1 - alpha)) * mean(max(l_i - xi, 0))`.
pub fn cvar_hinge(batch: &RiskBatch, xi: f64, alpha: f64) -> Result<f64, RiskError> {
    check_alpha(alpha)?;
    let excess: f64 = batch.losses().iter().map(|&l| (l - xi).max(0.0)).sum();
    Ok(xi + excess / batch.len() as f64 / (1.0 - alpha))
}

/// Graph-recorded hinge objective over a vector node of losses; `xi` is a
/// constant.
pub fn cvar_hinge_graph(g: &mut Graph, losses: Var, xi: f64, alpha: f64) -> Result<Var, RiskError> {
    check_alpha(alpha)?;
    let shifted = g.add_const(losses, -xi);
    let excess = g.hinge(shifted);
    let mean = g.mean(excess);
    let scaled = g.scale(mean, 1.0 / (1.0 - alpha));
    Ok(g.add_const(scaled, xi))
}

/// Derivative of the hinge objective with respect to each task loss.
pub fn cvar_hinge_weights(batch: &RiskBatch, xi: f64, alpha: f64) -> Result<Vec<f64>, RiskError> {
    let mut g = Graph::new();
    let l = g.param(Tensor::vector(batch.losses().to_vec()));
    let obj = cvar_hinge_graph(&mut g, l, xi, alpha)?;
    let gr = g.grad(obj, &[l], false)?;
    Ok(g.value(gr.vars[0]).data().to_vec())
}

/// Leader's screening: keep the `K = ceil(B (1 - alpha))` largest losses
/// (ties by ascending task id); the quantile comes from `estimator`.
pub fn screen_tasks(
    batch: &RiskBatch,
    alpha: f64,
    estimator: QuantileMethod,
    kde: &KdeConfig,
) -> Result<LeaderDecision, RiskError> {
    let quantile = match estimator {
        QuantileMethod::Mc => var_mc(batch, alpha)?,
        QuantileMethod::Kde => var_kde(batch, alpha, kde)?,
    };
    let k = tail_count(batch.len(), alpha);
    let mut mask = vec![false; batch.len()];
    for &i in &batch.rank_descending()[..k] {
        mask[i] = true;
    }
    Ok(LeaderDecision {
        quantile,
        mask,
        screened_count: k,
    })
}

/// Mean of the `(1 - alpha) B` largest losses; only defined when that count
/// is an integer.
pub fn cvar_exact_discrete(batch: &RiskBatch, alpha: f64) -> Result<f64, RiskError> {
    check_alpha(alpha)?;
    let kf = batch.len() as f64 * (1.0 - alpha);
    let k = kf.round();
    if (kf - k).abs() > 1e-9 || k < 1.0 {
        return Err(RiskError::NonIntegerTail(kf));
    }
    let order = batch.rank_descending();
    let k = k as usize;
    Ok(order[..k].iter().map(|&i| batch.losses[i]).sum::<f64>() / k as f64)
}

/// Mean of the `ceil(N (1 - alpha))` largest values.
pub fn tail_mean(values: &[f64], alpha: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let k = tail_count(v.len(), alpha);
    v[..k].iter().sum::<f64>() / k as f64
}
