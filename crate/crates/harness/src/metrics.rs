//! Error metrics comparing learned parameters with the truth.

use plg_core::{plg_param_count, Error, PlgParams};
use rand::Rng;

/// Sum of absolute differences over the flat parameter vector, divided by
/// the number of parameters.
pub fn param_l1_error(learned: &PlgParams, truth: &PlgParams) -> plg_core::Result<f64> {
    if learned.n() != truth.n() {
        return Err(Error::DimensionMismatch {
            expected: truth.n(),
            got: learned.n(),
        });
    }
    let a = learned.flatten();
    let b = truth.flatten();
    let total: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    Ok(total / plg_param_count(truth.n()) as f64)
}

/// Shifts every flat parameter of `truth` by `±eps` with random signs, so the
/// result sits at L1 error exactly `eps` (up to rounding). Sign patterns that
/// give an invalid `Σ₀` or a negative `σ²` are redrawn; `None` if none of
/// `attempts` draws is valid.
pub fn perturb_params<R: Rng + ?Sized>(
    truth: &PlgParams,
    eps: f64,
    rng: &mut R,
    attempts: usize,
) -> Option<PlgParams> {
    let flat = truth.flatten();
    for _ in 0..attempts {
        let shifted: Vec<f64> = flat
            .iter()
            .map(|v| if rng.random::<bool>() { v + eps } else { v - eps })
            .collect();
        if let Ok(p) = PlgParams::from_flat(truth.n(), &shifted) {
            return Some(p);
        }
    }
    None
}

/// Linear-interpolation quantile of sorted data, `q` in `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Median, lower and upper quartile of the finite entries of `values`.
pub fn summarize(values: &[f64]) -> (f64, f64, f64) {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    (
        quantile_sorted(&v, 0.5),
        quantile_sorted(&v, 0.25),
        quantile_sorted(&v, 0.75),
    )
}
