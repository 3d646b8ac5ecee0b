//! Central finite-difference gradient oracle.
//!
//! Used by the test suites to check analytic gradients. The oracle only
//! ever calls the supplied forward closure, so it stays independent of the
//! backward implementation it judges.

use super::Tensor;

/// Gradient of `f` at `at`, estimated by central differences with step `h`.
///
/// The closure receives a detached copy of `at` with one element perturbed
/// and must rebuild the forward pass from it. Evaluations run under
/// `no_grad` so the probing never touches the tape.
pub fn finite_difference_grad(f: impl Fn(&Tensor) -> f64, at: &Tensor, h: f64) -> Vec<f64> {
    let base = at.data().to_vec();
    let shape = at.shape().to_vec();
    let mut grad = vec![0.0; base.len()];
    super::no_grad(|| {
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let fp = f(&Tensor::from_vec(&shape, plus).unwrap());
            let fm = f(&Tensor::from_vec(&shape, minus).unwrap());
            grad[i] = (fp - fm) / (2.0 * h);
        }
    });
    grad
}

/// Relative error between an analytic and an estimated derivative, with a
/// floor so near-zero gradients are compared absolutely.
pub fn rel_err(analytic: f64, estimate: f64) -> f64 {
    (analytic - estimate).abs() / analytic.abs().max(estimate.abs()).max(1e-3)
}

/// Worst relative error over two gradient vectors.
pub fn max_rel_err(analytic: &[f64], estimate: &[f64]) -> f64 {
    assert_eq!(analytic.len(), estimate.len());
    analytic
        .iter()
        .zip(estimate)
        .map(|(&a, &e)| rel_err(a, e))
        .fold(0.0, f64::max)
}
