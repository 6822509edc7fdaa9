//! Monte Carlo versus kernel value-at-risk accuracy as a function of the
//! batch size.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use super::EvalError;
use crate::risk::{var_kde, var_mc, KdeConfig, QuantileMethod, RiskBatch};

/// Where benchmark batches are drawn from.
#[derive(Clone, Debug, PartialEq)]
pub enum LossSource {
    /// Unit-rate exponential; the true quantile is `-ln(1 - alpha)`.
    Exp1,
    /// Resampling with replacement from a large pool (e.g. the losses of a
    /// trained model on 10^5 tasks); the pool's own quantile is the oracle.
    Empirical(Vec<f64>),
    Constant(f64),
}

impl LossSource {
    fn oracle(&self, alpha: f64) -> Result<f64, EvalError> {
        Ok(match self {
            LossSource::Exp1 => -(1.0 - alpha).ln(),
            LossSource::Empirical(pool) => {
                var_mc(&RiskBatch::from_losses(pool.clone())?, alpha)?.xi_hat
            }
            LossSource::Constant(c) => *c,
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        match self {
            LossSource::Exp1 => (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect(),
            LossSource::Empirical(pool) => {
                (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect()
            }
            LossSource::Constant(c) => vec![*c; n],
        }
    }
}

/// Mean absolute VaR error of one `(method, alpha, B)` cell.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileErrorRow {
    pub method: QuantileMethod,
    pub alpha: f64,
    pub batch_size: usize,
    pub trials: usize,
    pub oracle: f64,
    pub mean_abs_error: f64,
}

/// Both estimators see the same batches, so their errors are paired. Each
/// `(alpha, B)` cell draws from its own stream of `seed`.
pub fn quantile_benchmark(
    source: &LossSource,
    alphas: &[f64],
    sizes: &[usize],
    trials: usize,
    seed: u64,
    kde: &KdeConfig,
) -> Result<Vec<QuantileErrorRow>, EvalError> {
    if trials == 0 {
        return Err(EvalError::Contract("trials must be at least 1".into()));
    }
    if let LossSource::Empirical(pool) = source {
        if pool.is_empty() {
            return Err(EvalError::Empty);
        }
    }
    let mut rows = Vec::new();
    for (ai, &alpha) in alphas.iter().enumerate() {
        if !(0.0..1.0).contains(&alpha) {
            return Err(EvalError::Alpha(alpha));
        }
        let oracle = source.oracle(alpha)?;
        for (si, &b) in sizes.iter().enumerate() {
            if b == 0 {
                return Err(EvalError::Contract("batch sizes must be positive".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((ai * sizes.len() + si) as u64);
            let (mut err_mc, mut err_kde) = (0.0, 0.0);
            for _ in 0..trials {
                let batch = RiskBatch::from_losses(source.draw(&mut rng, b))?;
                err_mc += (var_mc(&batch, alpha)?.xi_hat - oracle).abs();
                err_kde += (var_kde(&batch, alpha, kde)?.xi_hat - oracle).abs();
            }
            for (method, err) in [(QuantileMethod::Mc, err_mc), (QuantileMethod::Kde, err_kde)] {
                rows.push(QuantileErrorRow {
                    method,
                    alpha,
                    batch_size: b,
                    trials,
                    oracle,
                    mean_abs_error: err / trials as f64,
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp1_oracle() {
        assert!((LossSource::Exp1.oracle(0.7).unwrap() - 1.203_972_804_3).abs() < 1e-9);
    }

    #[test]
    fn constant_source_has_zero_error() {
        let rows = quantile_benchmark(&LossSource::Constant(2.5), &[0.3, 0.7], &[1, 10], 5, 0, &KdeConfig::default()).unwrap();
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|r| r.mean_abs_error == 0.0));
    }

    #[test]
    fn deterministic_for_a_seed() {
        let k = KdeConfig::default();
        let a = quantile_benchmark(&LossSource::Exp1, &[0.7], &[20], 10, 4, &k).unwrap();
        assert_eq!(a, quantile_benchmark(&LossSource::Exp1, &[0.7], &[20], 10, 4, &k).unwrap());
        assert!(quantile_benchmark(&LossSource::Exp1, &[0.7], &[20], 0, 4, &k).is_err());
    }
}
