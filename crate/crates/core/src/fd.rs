//! Central finite differences.
//!
//! Independent derivative oracle used by the test suites to validate every
//! analytic gradient in the crate. It only ever calls the *value* of a
//! function, never its gradient path.

/// Central difference of a scalar function along coordinate `i`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Full central-difference gradient.
pub fn gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len()).map(|i| central_diff(f, x, i, h)).collect()
}

/// Relative error between two gradients, `|a-b| / max(1e-12, |a|, |b|)`,
/// maximized over coordinates whose magnitude clears `floor` (tiny entries
/// are compared absolutely against the same floor).
pub fn max_rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let scale = a.abs().max(n.abs());
        let err = if scale > floor {
            (a - n).abs() / scale
        } else {
            (a - n).abs() / floor
        };
        worst = worst.max(err);
    }
    worst
}
