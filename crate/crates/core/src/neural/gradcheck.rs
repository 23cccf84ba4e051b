//! Central finite-difference helpers for checking analytic gradients.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::stream_rng;

use super::tensor::Tensor;

/// Standard-normal tensor from a fixed seed.
pub fn random_tensor<T: crate::scalar::Real>(shape: [usize; 4], seed: u64) -> Tensor<T> {
    let mut rng = stream_rng(seed, 0x6772_6164);
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.sample(StandardNormal);
        T::from_f64_lossy(v)
    })
}

/// Central-difference gradient of scalar `f` at `x`, step `1e-6` relative to
/// each coordinate's magnitude (at least `1e-6`).
pub fn numeric_grad(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = x.data()[i];
        let h = 1e-6 * orig.abs().max(1.0);
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Largest elementwise `|a - b| / max(|a|, |b|)`. Entries smaller than
/// `1e-6` of the largest magnitude in either vector are compared against
/// that floor instead, so exact zeros do not divide by zero.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-6 * scale).max(f64::MIN_POSITIVE);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
