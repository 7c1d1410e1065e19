//! Finite-difference gradient oracle.
//!
//! Used by the test suites to verify analytic gradients independently:
//! the oracle only re-evaluates the function, never the backward pass.

/// Central-difference numeric gradient of `f` at `x` with step `h`.
pub fn numeric_gradient<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Scaled relative error between two gradients, elementwise maximum.
///
/// Each element is |a−b| / max(1, |a|, |b|), so small absolute noise on
/// near-zero gradients does not blow up the ratio.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y).abs() / 1.0_f64.max(x.abs()).max(y.abs()))
        .fold(0.0, f64::max)
}
