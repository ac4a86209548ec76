//! Central-difference gradient oracle.

use crate::{Error, Result};

/// Numeric gradient of `loss_fn` at `params` by central differences.
pub fn central_difference<F>(mut loss_fn: F, params: &[f64], epsilon: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Argument(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut probe = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + epsilon;
        let up = loss_fn(&probe);
        probe[i] = orig - epsilon;
        let down = loss_fn(&probe);
        probe[i] = orig;
        numeric.push((up - down) / (2.0 * epsilon));
    }
    Ok(numeric)
}

/// `max_i |a_i - n_i| / max(1, |a_i|, |n_i|)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / 1f64.max(a.abs()).max(n.abs()))
        .fold(0.0, f64::max)
}

/// Compares an analytic gradient against central differences of `loss_fn`
/// and returns the largest relative error. `loss_fn` must be deterministic;
/// any gate noise has to be frozen by the caller.
pub fn finite_difference_check<F>(
    loss_fn: F,
    params: &[f64],
    analytic: &[f64],
    epsilon: f64,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != params.len() {
        return Err(Error::shape("finite_difference_check", params.len(), analytic.len()));
    }
    let numeric = central_difference(loss_fn, params, epsilon)?;
    Ok(max_relative_error(analytic, &numeric))
}
