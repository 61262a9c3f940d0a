//! Central-difference gradient checking.

use super::{NnError, Result};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;

/// Default pass threshold on the reported error.
pub const TOLERANCE: f64 = 1e-4;

/// `|a - n| / max(1, |a|, |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares `analytic` against central differences of `f` at `point`,
/// perturbing every coordinate, and returns the largest relative error.
pub fn grad_check(mut f: impl FnMut(&[f64]) -> f64, point: &[f64], analytic: &[f64]) -> Result<f64> {
    if point.len() != analytic.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} coordinates but {} analytic partials",
            point.len(),
            analytic.len()
        )));
    }
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + STEP;
        let up = f(&x);
        x[i] = orig - STEP;
        let down = f(&x);
        x[i] = orig;
        if !up.is_finite() || !down.is_finite() || !analytic[i].is_finite() {
            return Err(NnError::NonFinite(format!("coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}
