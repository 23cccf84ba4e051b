//! Windowed structural similarity with its gradient.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Stabilizer constants `(C1, C2)` for dynamic range `l`.
pub fn ssim_constants<T: Real>(l: T) -> (T, T) {
    let k1 = T::from_f64_lossy(0.01) * l;
    let k2 = T::from_f64_lossy(0.03) * l;
    (k1 * k1, k2 * k2)
}

struct WindowStats<T> {
    mu_a: T,
    mu_b: T,
    a1: T,
    a2: T,
    b1: T,
    b2: T,
}

fn check<T: Real>(a: &[T], b: &[T], h: usize, w: usize, l: T, window: usize) -> Result<()> {
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::Shape(format!(
            "ssim inputs of {} and {} values for a {h}x{w} image",
            a.len(),
            b.len()
        )));
    }
    if window == 0 || window > h || window > w {
        return Err(Error::Shape(format!("ssim window {window} larger than image {h}x{w}")));
    }
    if !(l > T::zero()) {
        return Err(Error::Degenerate(format!("ssim dynamic range must be positive, got {l}")));
    }
    Ok(())
}

fn window_stats<T: Real>(a: &[T], b: &[T], w: usize, y0: usize, x0: usize, window: usize, c: (T, T)) -> WindowStats<T> {
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
    for y in y0..y0 + window {
        for x in x0..x0 + window {
            let (va, vb) = (a[y * w + x], b[y * w + x]);
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
        }
    }
    let n = T::from_usize_lossy(window * window);
    let two = T::one() + T::one();
    let mu_a = sa / n;
    let mu_b = sb / n;
    let var_a = saa / n - mu_a * mu_a;
    let var_b = sbb / n - mu_b * mu_b;
    let cov = sab / n - mu_a * mu_b;
    WindowStats {
        mu_a,
        mu_b,
        a1: two * mu_a * mu_b + c.0,
        a2: two * cov + c.1,
        b1: mu_a * mu_a + mu_b * mu_b + c.0,
        b2: var_a + var_b + c.1,
    }
}

/// Mean SSIM of `a` against `b` (row-major `h x w`) over every position of
/// a `window x window` uniform window that fits inside the image.
pub fn ssim<T: Real>(a: &[T], b: &[T], h: usize, w: usize, l: T, window: usize) -> Result<T> {
    check(a, b, h, w, l, window)?;
    let c = ssim_constants(l);
    let mut total = T::zero();
    for y0 in 0..=h - window {
        for x0 in 0..=w - window {
            let s = window_stats(a, b, w, y0, x0, window, c);
            total += s.a1 * s.a2 / (s.b1 * s.b2);
        }
    }
    Ok(total / T::from_usize_lossy((h - window + 1) * (w - window + 1)))
}

/// Mean SSIM and its gradient with respect to `a`. `l` is treated as a
/// constant.
pub fn ssim_with_grad<T: Real>(a: &[T], b: &[T], h: usize, w: usize, l: T, window: usize) -> Result<(T, Vec<T>)> {
    check(a, b, h, w, l, window)?;
    let c = ssim_constants(l);
    let positions = T::from_usize_lossy((h - window + 1) * (w - window + 1));
    let n = T::from_usize_lossy(window * window);
    let two = T::one() + T::one();
    // per pixel: grad = gamma + alpha * b + beta * a, each summed over the
    // windows covering the pixel
    let mut alpha = vec![T::zero(); h * w];
    let mut beta = vec![T::zero(); h * w];
    let mut gamma = vec![T::zero(); h * w];
    let mut total = T::zero();
    for y0 in 0..=h - window {
        for x0 in 0..=w - window {
            let s = window_stats(a, b, w, y0, x0, window, c);
            total += s.a1 * s.a2 / (s.b1 * s.b2);
            let d = two / (n * s.b1 * s.b1 * s.b2 * s.b2 * positions);
            let ca = d * s.a1 * s.b1 * s.b2;
            let cb = -d * s.a1 * s.b1 * s.a2;
            let cg = d * (s.b1 * s.b2 * (s.a2 - s.a1) * s.mu_b + s.a1 * s.a2 * (s.b1 - s.b2) * s.mu_a);
            for y in y0..y0 + window {
                for x in x0..x0 + window {
                    let p = y * w + x;
                    alpha[p] += ca;
                    beta[p] += cb;
                    gamma[p] += cg;
                }
            }
        }
    }
    let grad = (0..h * w).map(|p| gamma[p] + alpha[p] * b[p] + beta[p] * a[p]).collect();
    Ok((total / positions, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::{max_rel_error, numeric_grad, random_tensor};
    use crate::neural::Tensor;

    #[test]
    fn self_similarity_is_one() {
        let x = random_tensor::<f64>([1, 1, 12, 10], 1).map(f64::abs);
        assert_eq!(ssim(x.data(), x.data(), 12, 10, 3.0, 7).unwrap(), 1.0);
        let (v, g) = ssim_with_grad(x.data(), x.data(), 12, 10, 3.0, 7).unwrap();
        assert_eq!(v, 1.0);
        assert!(g.iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn anticorrelated_checker_is_negative() {
        let (h, w) = (14, 14);
        let x: Vec<f64> = (0..h * w).map(|p| if (p / w + p % w) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let y: Vec<f64> = x.iter().map(|v| 5.0 - v).collect();
        let s = ssim(&x, &y, h, w, 6.0, 7).unwrap();
        assert!(s < 0.0, "{s}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = vec![0.0f64; 36];
        assert!(ssim(&x, &x, 6, 6, 1.0, 7).is_err());
        assert!(ssim(&x, &x, 6, 6, 0.0, 3).is_err());
        assert!(ssim(&x, &x[..30], 6, 6, 1.0, 3).is_err());
        assert!(ssim(&x, &x, 6, 6, 1.0, 6).is_ok());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (seed, window) in [(2, 7), (3, 3)] {
            let a = random_tensor::<f64>([1, 1, 11, 9], seed);
            let b = random_tensor::<f64>([1, 1, 11, 9], seed + 50);
            let (_, g) = ssim_with_grad(a.data(), b.data(), 11, 9, 4.0, window).unwrap();
            let num = numeric_grad(&a, |t: &Tensor<f64>| ssim(t.data(), b.data(), 11, 9, 4.0, window).unwrap());
            assert!(max_rel_error(&g, num.data()) < 1e-4);
        }
    }
}
