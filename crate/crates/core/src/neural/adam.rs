use crate::error::{Error, Result};
use crate::scalar::Real;

use super::layers::Param;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Staircase exponential decay: `base * decay^epoch` with `epoch` counted
/// from 0.
pub fn learning_rate(base: f64, decay: f64, epoch: usize) -> f64 {
    base * decay.powi(epoch as i32)
}

/// Bias-corrected Adam moments for a fixed, ordered list of parameters.
#[derive(Debug, Clone, Default)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new() -> Self {
        Self {
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    /// One update of every parameter from its accumulated gradient.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Param<T>>, lr: f64) -> Result<()> {
        self.t += 1;
        let b1 = T::from_f64_lossy(BETA1);
        let b2 = T::from_f64_lossy(BETA2);
        let eps = T::from_f64_lossy(EPSILON);
        let lr = T::from_f64_lossy(lr);
        let t = self.t as i32;
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let first = self.m.is_empty();
        for (k, p) in params.into_iter().enumerate() {
            let n = p.value.len();
            if first {
                self.m.push(vec![T::zero(); n]);
                self.v.push(vec![T::zero(); n]);
            }
            let (m, v) = match (self.m.get_mut(k), self.v.get_mut(k)) {
                (Some(m), Some(v)) if m.len() == n => (m, v),
                _ => {
                    return Err(Error::Shape(format!(
                        "adam state has no slot of size {n} for parameter {k}"
                    )))
                }
            };
            let grad = p.grad.data();
            for (i, x) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
