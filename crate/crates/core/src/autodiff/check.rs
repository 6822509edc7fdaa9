//! Central finite-difference gradient check.

use super::AutodiffError;

#[derive(Clone, Debug)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// Coordinate where the maximum occurred.
    pub worst_coord: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares `analytic` against central differences of `loss` around
/// `params`. Per coordinate the error is `|a - n| / max(|a|, |n|, floor)`,
/// so gradients smaller than `floor` are compared absolutely.
pub fn finite_difference_check<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    step: f64,
    floor: f64,
) -> Result<FdReport, AutodiffError>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0 && step <= 1e-2) {
        return Err(AutodiffError::Step(step));
    }
    if analytic.len() != params.len() {
        return Err(AutodiffError::Shape(format!(
            "{} analytic gradients for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut x = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let mut worst = (0.0, 0);
    for i in 0..params.len() {
        let orig = x[i];
        x[i] = orig + step;
        let up = loss(&x);
        x[i] = orig - step;
        let down = loss(&x);
        x[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(AutodiffError::NonFinite { coord: i });
        }
        let n = (up - down) / (2.0 * step);
        let a = analytic[i];
        let err = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if err > worst.0 {
            worst = (err, i);
        }
        numeric.push(n);
    }
    Ok(FdReport {
        max_rel_error: worst.0,
        worst_coord: worst.1,
        analytic: analytic.to_vec(),
        numeric,
    })
}
