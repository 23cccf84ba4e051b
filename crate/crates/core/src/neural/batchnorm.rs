//! Per-channel batch normalization.

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
/// Weight kept by the running statistics at each training step.
pub const BN_MOMENTUM: f64 = 0.9;

/// Saved by a training-mode forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
}

fn channel_stats<T: Real>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let count = T::from_usize_lossy(n * plane);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for i in 0..n {
            s += x.sample(i)[ch * plane..(ch + 1) * plane].iter().copied().sum::<T>();
        }
        let mu = s / count;
        let mut q = T::zero();
        for i in 0..n {
            for &v in &x.sample(i)[ch * plane..(ch + 1) * plane] {
                q += (v - mu) * (v - mu);
            }
        }
        mean[ch] = mu;
        var[ch] = q / count;
    }
    (mean, var)
}

fn check<T: Real>(x: &Tensor<T>, gamma: &[T], beta: &[T]) -> Result<()> {
    if x.batch() == 0 || x.height() * x.width() == 0 {
        return Err(Error::Empty("batch normalization of an empty batch".into()));
    }
    if gamma.len() != x.channels() || beta.len() != x.channels() {
        return Err(Error::Shape(format!(
            "batchnorm parameters for {} channels, input has {}",
            gamma.len(),
            x.channels()
        )));
    }
    Ok(())
}

fn affine<T: Real>(x: &Tensor<T>, mean: &[T], inv_std: &[T], gamma: &[T], beta: &[T]) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let mut x_hat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    for i in 0..n {
        let src = x.sample(i);
        for ch in 0..c {
            let r = ch * plane..(ch + 1) * plane;
            let xh = &mut x_hat.sample_mut(i)[r.clone()];
            for (o, &v) in xh.iter_mut().zip(&src[r.clone()]) {
                *o = (v - mean[ch]) * inv_std[ch];
            }
            let xh = &x_hat.sample(i)[r.clone()];
            for (o, &v) in y.sample_mut(i)[r].iter_mut().zip(xh) {
                *o = gamma[ch] * v + beta[ch];
            }
        }
    }
    (y, x_hat)
}

/// Training-mode forward: normalizes with batch statistics (biased
/// variance) and folds them into `running_mean` / `running_var`.
pub fn batchnorm_train<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &mut [T],
    running_var: &mut [T],
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    check(x, gamma, beta)?;
    let (mean, var) = channel_stats(x);
    let eps = T::from_f64_lossy(BN_EPS);
    let inv_std: Vec<T> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
    let (y, x_hat) = affine(x, &mean, &inv_std, gamma, beta);
    let keep = T::from_f64_lossy(BN_MOMENTUM);
    for ch in 0..x.channels() {
        running_mean[ch] = keep * running_mean[ch] + (T::one() - keep) * mean[ch];
        running_var[ch] = keep * running_var[ch] + (T::one() - keep) * var[ch];
    }
    y.debug_check_finite("batchnorm");
    Ok((y, BatchNormCache { x_hat, inv_std }))
}

/// Inference-mode forward using running statistics.
pub fn batchnorm_infer<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
) -> Result<Tensor<T>> {
    check(x, gamma, beta)?;
    let eps = T::from_f64_lossy(BN_EPS);
    let inv_std: Vec<T> = running_var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
    let (y, _) = affine(x, running_mean, &inv_std, gamma, beta);
    y.debug_check_finite("batchnorm");
    Ok(y)
}

/// Gradients with respect to input, gamma and beta of a training-mode pass.
pub fn batchnorm_backward<T: Real>(
    dy: &Tensor<T>,
    gamma: &[T],
    cache: &BatchNormCache<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    if dy.shape() != cache.x_hat.shape() {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} vs batchnorm input {:?}",
            dy.shape(),
            cache.x_hat.shape()
        )));
    }
    let [n, c, h, w] = dy.shape();
    let plane = h * w;
    let count = T::from_usize_lossy(n * plane);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for i in 0..n {
        let d = dy.sample(i);
        let xh = cache.x_hat.sample(i);
        for ch in 0..c {
            let r = ch * plane..(ch + 1) * plane;
            for (&g, &v) in d[r.clone()].iter().zip(&xh[r]) {
                dbeta[ch] += g;
                dgamma[ch] += g * v;
            }
        }
    }
    let mut dx = Tensor::zeros(dy.shape());
    for i in 0..n {
        let d = dy.sample(i);
        let xh = cache.x_hat.sample(i);
        let out = dx.sample_mut(i);
        for ch in 0..c {
            let scale = gamma[ch] * cache.inv_std[ch] / count;
            for p in ch * plane..(ch + 1) * plane {
                out[p] = scale * (count * d[p] - dbeta[ch] - xh[p] * dgamma[ch]);
            }
        }
    }
    dx.debug_check_finite("batchnorm_backward");
    Ok((dx, dgamma, dbeta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::{max_rel_error, numeric_grad, random_tensor};

    #[test]
    fn train_output_is_standardized() {
        let x = random_tensor::<f64>([4, 3, 6, 5], 1).map(|v| 3.0 * v + 2.0);
        let (mut rm, mut rv) = (vec![0.0; 3], vec![1.0; 3]);
        let (y, _) = batchnorm_train(&x, &[1.0; 3], &[0.0; 3], &mut rm, &mut rv).unwrap();
        let (mean, var) = channel_stats(&y);
        for ch in 0..3 {
            assert!(mean[ch].abs() < 1e-6);
            assert!((var[ch] - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = random_tensor::<f64>([2, 2, 4, 4], 2);
        let (mean, var) = channel_stats(&x);
        let (mut rm, mut rv) = (vec![1.0; 2], vec![2.0; 2]);
        batchnorm_train(&x, &[1.0; 2], &[0.0; 2], &mut rm, &mut rv).unwrap();
        for ch in 0..2 {
            assert!((rm[ch] - (0.9 + 0.1 * mean[ch])).abs() < 1e-15);
            assert!((rv[ch] - (1.8 + 0.1 * var[ch])).abs() < 1e-15);
        }
    }

    #[test]
    fn infer_with_batch_stats_equals_train() {
        let x = random_tensor::<f64>([3, 2, 5, 5], 3);
        let (mean, var) = channel_stats(&x);
        let (mut rm, mut rv) = (vec![0.0; 2], vec![0.0; 2]);
        let (yt, _) = batchnorm_train(&x, &[1.0; 2], &[0.0; 2], &mut rm, &mut rv).unwrap();
        let yi = batchnorm_infer(&x, &[1.0; 2], &[0.0; 2], &mean, &var).unwrap();
        assert_eq!(yt, yi);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let x = Tensor::<f64>::zeros([0, 2, 4, 4]);
        let (mut rm, mut rv) = (vec![0.0; 2], vec![0.0; 2]);
        assert!(batchnorm_train(&x, &[1.0; 2], &[0.0; 2], &mut rm, &mut rv).is_err());
        let x = Tensor::<f64>::zeros([1, 3, 4, 4]);
        assert!(batchnorm_train(&x, &[1.0; 2], &[0.0; 2], &mut rm, &mut rv).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = random_tensor::<f64>([3, 2, 4, 5], 4);
        let gamma = vec![1.3, -0.7];
        let beta = vec![0.2, 0.5];
        let r = random_tensor::<f64>(x.shape(), 5);
        let run = |x: &Tensor<f64>, g: &[f64], b: &[f64]| {
            let (mut rm, mut rv) = (vec![0.0; 2], vec![0.0; 2]);
            batchnorm_train(x, g, b, &mut rm, &mut rv).unwrap()
        };
        let (_, cache) = run(&x, &gamma, &beta);
        let (dx, dg, db) = batchnorm_backward(&r, &gamma, &cache).unwrap();
        let nx = numeric_grad(&x, |t| run(t, &gamma, &beta).0.dot(&r));
        assert!(max_rel_error(dx.data(), nx.data()) < 1e-4);
        let gt = Tensor::from_vec([1, 1, 1, 2], gamma.clone()).unwrap();
        let ng = numeric_grad(&gt, |t| run(&x, t.data(), &beta).0.dot(&r));
        assert!(max_rel_error(&dg, ng.data()) < 1e-4);
        let bt = Tensor::from_vec([1, 1, 1, 2], beta.clone()).unwrap();
        let nb = numeric_grad(&bt, |t| run(&x, &gamma, t.data()).0.dot(&r));
        assert!(max_rel_error(&db, nb.data()) < 1e-4);
    }
}
