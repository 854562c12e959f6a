//! Numerical gradient checking via central finite differences.
//!
//! Independent of the graph's backward rules: it only re-evaluates a scalar
//! function at perturbed inputs.

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn central_diff_grad<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// `|a - n| / max(|a|, |n|, 1)` — relative for large gradients, absolute
/// near zero so vanishing coordinates do not blow up the ratio.
pub fn grad_rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Worst-case [`grad_rel_err`] over two gradient vectors.
pub fn max_grad_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| grad_rel_err(a, n))
        .fold(0.0, f64::max)
}
