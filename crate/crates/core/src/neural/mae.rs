use crate::error::{Error, Result};
use crate::scalar::Real;

/// Mean absolute error over the pixels where `mask` is set, and its
/// subgradient with respect to `pred` (zero at exact ties).
pub fn masked_mae<T: Real>(pred: &[T], target: &[T], mask: &[bool]) -> Result<(T, Vec<T>)> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(Error::Shape(format!(
            "masked mae over {} / {} values with a {}-pixel mask",
            pred.len(),
            target.len(),
            mask.len()
        )));
    }
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let inv = T::from_usize_lossy(n).recip();
    let mut sum = T::zero();
    let mut grad = vec![T::zero(); pred.len()];
    for i in 0..pred.len() {
        if !mask[i] {
            continue;
        }
        let d = pred[i] - target[i];
        sum += d.abs();
        if d > T::zero() {
            grad[i] = inv;
        } else if d < T::zero() {
            grad[i] = -inv;
        }
    }
    Ok((sum * inv, grad))
}
