//! Zero-padded 2D cross-correlation, its adjoint (transposed convolution),
//! and their gradients. Kernels are square, `[out, in, k, k]` for
//! convolutions and `[in, out, k, k]` for transposed convolutions, so a
//! transposed convolution with kernel `w` is exactly the adjoint of the
//! convolution with the same `w`.

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
        }
    }

    /// Output size of the convolution along one axis.
    pub fn output_len(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }

    fn check(&self) -> Result<()> {
        if self.kernel == 0 || !(1..=2).contains(&self.stride) {
            return Err(Error::Shape(format!(
                "unsupported conv geometry: kernel {}, stride {}",
                self.kernel, self.stride
            )));
        }
        Ok(())
    }
}

/// Unfolds one `(c, h, w)` sample into a `(c * k * k) x (oh * ow)` matrix.
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, g: ConvGeometry, oh: usize, ow: usize, cols: &mut [T]) {
    let k = g.kernel;
    let pad = g.padding as isize;
    let plane = oh * ow;
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride) as isize + ky as isize - pad;
                    let out = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let line = &src[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride) as isize + kx as isize - pad;
                        *o = if ix < 0 || ix >= w as isize { T::zero() } else { line[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatters columns back onto a `(c, h, w)` sample,
/// accumulating into `x`.
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, g: ConvGeometry, oh: usize, ow: usize, x: &mut [T]) {
    let k = g.kernel;
    let pad = g.padding as isize;
    let plane = oh * ow;
    for ch in 0..c {
        let dst = &mut x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride) as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = (ox * g.stride) as isize + kx as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            line[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn kernel_dims<T: Real>(kernel: &Tensor<T>, g: ConvGeometry) -> Result<(usize, usize)> {
    let [a, b, kh, kw] = kernel.shape();
    if kh != g.kernel || kw != g.kernel {
        return Err(Error::Shape(format!(
            "kernel is {kh}x{kw}, geometry says {}",
            g.kernel
        )));
    }
    Ok((a, b))
}

fn check_bias<T: Real>(bias: Option<&[T]>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != channels => Err(Error::Shape(format!(
            "bias has {} values for {channels} channels",
            b.len()
        ))),
        _ => Ok(()),
    }
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (ch, &b) in bias.iter().enumerate() {
        for v in &mut out[ch * plane..(ch + 1) * plane] {
            *v += b;
        }
    }
}

fn bias_grad<T: Real>(dy: &Tensor<T>) -> Vec<T> {
    let [n, c, h, w] = dy.shape();
    let plane = h * w;
    let mut db = vec![T::zero(); c];
    for i in 0..n {
        let s = dy.sample(i);
        for (ch, d) in db.iter_mut().enumerate() {
            *d += s[ch * plane..(ch + 1) * plane].iter().copied().sum::<T>();
        }
    }
    db
}

/// Cross-correlation of `x` (`[n, c_in, h, w]`) with `kernel`
/// (`[c_out, c_in, k, k]`).
pub fn conv2d<T: Real>(x: &Tensor<T>, kernel: &Tensor<T>, bias: Option<&[T]>, g: ConvGeometry) -> Result<Tensor<T>> {
    g.check()?;
    let [n, c_in, h, w] = x.shape();
    let (c_out, kc) = kernel_dims(kernel, g)?;
    if kc != c_in {
        return Err(Error::Shape(format!("kernel expects {kc} channels, input has {c_in}")));
    }
    check_bias(bias, c_out)?;
    let (oh, ow) = match (g.output_len(h), g.output_len(w)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Shape(format!("input {h}x{w} smaller than kernel {}", g.kernel))),
    };
    let rows = c_in * g.kernel * g.kernel;
    let mut cols = vec![T::zero(); rows * oh * ow];
    let mut y = Tensor::zeros([n, c_out, oh, ow]);
    for i in 0..n {
        im2col(x.sample(i), c_in, h, w, g, oh, ow, &mut cols);
        let out = y.sample_mut(i);
        T::gemm(c_out, rows, oh * ow, T::one(), kernel.data(), false, &cols, false, T::zero(), out);
        if let Some(b) = bias {
            add_bias(out, b, oh * ow);
        }
    }
    y.debug_check_finite("conv2d");
    Ok(y)
}

/// Gradients of `conv2d` with respect to input, kernel and bias.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    dy: &Tensor<T>,
    g: ConvGeometry,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let [n, c_in, h, w] = x.shape();
    let (c_out, _) = kernel_dims(kernel, g)?;
    let [dn, dc, oh, ow] = dy.shape();
    if dn != n || dc != c_out || Some(oh) != g.output_len(h) || Some(ow) != g.output_len(w) {
        return Err(Error::Shape(format!("upstream gradient {:?} does not match conv output", dy.shape())));
    }
    let rows = c_in * g.kernel * g.kernel;
    let mut cols = vec![T::zero(); rows * oh * ow];
    let mut dcols = vec![T::zero(); rows * oh * ow];
    let mut dx = Tensor::zeros(x.shape());
    let mut dk = Tensor::zeros(kernel.shape());
    for i in 0..n {
        im2col(x.sample(i), c_in, h, w, g, oh, ow, &mut cols);
        let dyi = dy.sample(i);
        T::gemm(c_out, oh * ow, rows, T::one(), dyi, false, &cols, true, T::one(), dk.data_mut());
        T::gemm(rows, c_out, oh * ow, T::one(), kernel.data(), true, dyi, false, T::zero(), &mut dcols);
        col2im(&dcols, c_in, h, w, g, oh, ow, dx.sample_mut(i));
    }
    dx.debug_check_finite("conv2d_backward");
    Ok((dx, dk, bias_grad(dy)))
}

/// Transposed convolution: the adjoint of `conv2d` with the same kernel
/// (`[c_in, c_out, k, k]` here, i.e. the convolution maps `c_out -> c_in`).
/// `out_hw` is the spatial size of the convolution's input; it must map back
/// onto the spatial size of `x`.
pub fn conv_transpose2d<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&[T]>,
    g: ConvGeometry,
    out_hw: (usize, usize),
) -> Result<Tensor<T>> {
    g.check()?;
    let [n, c_in, h, w] = x.shape();
    let (kc_in, c_out) = kernel_dims(kernel, g)?;
    if kc_in != c_in {
        return Err(Error::Shape(format!("kernel expects {kc_in} channels, input has {c_in}")));
    }
    check_bias(bias, c_out)?;
    let (oh, ow) = out_hw;
    if g.output_len(oh) != Some(h) || g.output_len(ow) != Some(w) {
        return Err(Error::Shape(format!(
            "output {oh}x{ow} does not convolve back to input {h}x{w}"
        )));
    }
    let rows = c_out * g.kernel * g.kernel;
    let mut cols = vec![T::zero(); rows * h * w];
    let mut y = Tensor::zeros([n, c_out, oh, ow]);
    for i in 0..n {
        T::gemm(rows, c_in, h * w, T::one(), kernel.data(), true, x.sample(i), false, T::zero(), &mut cols);
        let out = y.sample_mut(i);
        col2im(&cols, c_out, oh, ow, g, h, w, out);
        if let Some(b) = bias {
            add_bias(out, b, oh * ow);
        }
    }
    y.debug_check_finite("conv_transpose2d");
    Ok(y)
}

/// Gradients of `conv_transpose2d` with respect to input, kernel and bias.
pub fn conv_transpose2d_backward<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    dy: &Tensor<T>,
    g: ConvGeometry,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let [n, c_in, h, w] = x.shape();
    let (_, c_out) = kernel_dims(kernel, g)?;
    let [dn, dc, oh, ow] = dy.shape();
    if dn != n || dc != c_out || g.output_len(oh) != Some(h) || g.output_len(ow) != Some(w) {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} does not match transposed conv output",
            dy.shape()
        )));
    }
    let rows = c_out * g.kernel * g.kernel;
    let mut cols = vec![T::zero(); rows * h * w];
    let mut dx = Tensor::zeros(x.shape());
    let mut dk = Tensor::zeros(kernel.shape());
    for i in 0..n {
        im2col(dy.sample(i), c_out, oh, ow, g, h, w, &mut cols);
        T::gemm(c_in, rows, h * w, T::one(), kernel.data(), false, &cols, false, T::zero(), dx.sample_mut(i));
        T::gemm(c_in, h * w, rows, T::one(), x.sample(i), false, &cols, true, T::one(), dk.data_mut());
    }
    dx.debug_check_finite("conv_transpose2d_backward");
    Ok((dx, dk, bias_grad(dy)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::{max_rel_error, numeric_grad, random_tensor};

    #[test]
    fn identity_kernel_is_identity() {
        let x = random_tensor::<f64>([2, 1, 5, 6], 1);
        let mut k = Tensor::zeros([1, 1, 1, 1]);
        k.set([0, 0, 0, 0], 1.0);
        let y = conv2d(&x, &k, None, ConvGeometry::new(1, 1, 0)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn delta_response_of_box_kernel() {
        let mut x = Tensor::<f64>::zeros([1, 1, 5, 5]);
        x.set([0, 0, 2, 2], 1.0);
        let k = Tensor::from_fn([1, 1, 3, 3], |_| 1.0);
        let y = conv2d(&x, &k, None, ConvGeometry::new(3, 1, 0)).unwrap();
        assert_eq!(y.shape(), [1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn output_dims() {
        let g = ConvGeometry::new(3, 2, 1);
        for h in [8, 9, 64, 65] {
            let x = Tensor::<f32>::zeros([1, 2, h, 6]);
            let k = Tensor::<f32>::zeros([3, 2, 3, 3]);
            let y = conv2d(&x, &k, None, g).unwrap();
            assert_eq!(y.shape(), [1, 3, (h + 2 - 3) / 2 + 1, 3]);
        }
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::<f32>::zeros([1, 2, 8, 8]);
        let k = Tensor::<f32>::zeros([3, 3, 3, 3]);
        assert!(conv2d(&x, &k, None, ConvGeometry::new(3, 1, 1)).is_err());
        let k = Tensor::<f32>::zeros([3, 2, 3, 3]);
        assert!(conv2d(&x, &k, Some(&[0.0; 2]), ConvGeometry::new(3, 1, 1)).is_err());
        assert!(conv2d(&x, &k, None, ConvGeometry::new(3, 3, 1)).is_err());
        let tiny = Tensor::<f32>::zeros([1, 2, 1, 1]);
        assert!(conv2d(&tiny, &k, None, ConvGeometry::new(3, 1, 0)).is_err());
        let kt = Tensor::<f32>::zeros([2, 4, 3, 3]);
        assert!(conv_transpose2d(&x, &kt, None, ConvGeometry::new(3, 2, 1), (15, 16)).is_ok());
        assert!(conv_transpose2d(&x, &kt, None, ConvGeometry::new(3, 2, 1), (20, 16)).is_err());
    }

    #[test]
    fn transposed_conv_doubles_and_stamps_kernel() {
        let g = ConvGeometry::new(3, 2, 1);
        let mut x = Tensor::<f64>::zeros([1, 1, 4, 4]);
        x.set([0, 0, 1, 2], 1.0);
        let k = Tensor::from_fn([1, 1, 3, 3], |[_, _, a, b]| (1 + 3 * a + b) as f64);
        let y = conv_transpose2d(&x, &k, None, g, (8, 8)).unwrap();
        assert_eq!(y.shape(), [1, 1, 8, 8]);
        // input (1, 2) lands at output (2, 4); kernel tap (ky, kx) hits
        // (2 + ky - 1, 4 + kx - 1)
        for oy in 0..8 {
            for ox in 0..8 {
                let (dy, dx) = (oy as isize - 1, ox as isize - 3);
                let expect = if (0..3).contains(&dy) && (0..3).contains(&dx) {
                    (1 + 3 * dy + dx) as f64
                } else {
                    0.0
                };
                assert_eq!(y.get([0, 0, oy, ox]), expect);
            }
        }
    }

    #[test]
    fn transposed_conv_is_adjoint() {
        let g = ConvGeometry::new(3, 2, 1);
        for seed in 0..20 {
            let x = random_tensor::<f64>([2, 3, 10, 8], seed);
            let k = random_tensor::<f64>([4, 3, 3, 3], 100 + seed);
            let y = random_tensor::<f64>([2, 4, 5, 4], 200 + seed);
            let lhs = conv2d(&x, &k, None, g).unwrap().dot(&y);
            let rhs = x.dot(&conv_transpose2d(&y, &k, None, g, (10, 8)).unwrap());
            assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(rhs.abs()), "{lhs} {rhs}");
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for (stride, seed) in [(1, 3), (2, 4)] {
            let g = ConvGeometry::new(3, stride, 1);
            let x = random_tensor::<f64>([4, 1, 8, 8], seed);
            let k = random_tensor::<f64>([2, 1, 3, 3], seed + 10);
            let b = vec![0.3, -0.2];
            let y0 = conv2d(&x, &k, Some(&b), g).unwrap();
            let r = random_tensor::<f64>(y0.shape(), seed + 20);
            let (dx, dk, db) = conv2d_backward(&x, &k, &r, g).unwrap();
            let f_x = |t: &Tensor<f64>| conv2d(t, &k, Some(&b), g).unwrap().dot(&r);
            let f_k = |t: &Tensor<f64>| conv2d(&x, t, Some(&b), g).unwrap().dot(&r);
            assert!(max_rel_error(dx.data(), numeric_grad(&x, f_x).data()) < 1e-4);
            assert!(max_rel_error(dk.data(), numeric_grad(&k, f_k).data()) < 1e-4);
            let bt = Tensor::from_vec([1, 1, 1, 2], b.clone()).unwrap();
            let f_b = |t: &Tensor<f64>| conv2d(&x, &k, Some(t.data()), g).unwrap().dot(&r);
            assert!(max_rel_error(&db, numeric_grad(&bt, f_b).data()) < 1e-4);
        }
    }

    #[test]
    fn transposed_conv_gradients_match_finite_differences() {
        let g = ConvGeometry::new(3, 2, 1);
        let x = random_tensor::<f64>([2, 3, 4, 4], 7);
        let k = random_tensor::<f64>([3, 2, 3, 3], 8);
        let b = vec![0.1, -0.4];
        let r = random_tensor::<f64>([2, 2, 8, 8], 9);
        let (dx, dk, db) = conv_transpose2d_backward(&x, &k, &r, g).unwrap();
        let f_x = |t: &Tensor<f64>| conv_transpose2d(t, &k, Some(&b), g, (8, 8)).unwrap().dot(&r);
        let f_k = |t: &Tensor<f64>| conv_transpose2d(&x, t, Some(&b), g, (8, 8)).unwrap().dot(&r);
        assert!(max_rel_error(dx.data(), numeric_grad(&x, f_x).data()) < 1e-4);
        assert!(max_rel_error(dk.data(), numeric_grad(&k, f_k).data()) < 1e-4);
        let bt = Tensor::from_vec([1, 1, 1, 2], b.clone()).unwrap();
        let f_b = |t: &Tensor<f64>| conv_transpose2d(&x, &k, Some(t.data()), g, (8, 8)).unwrap().dot(&r);
        assert!(max_rel_error(&db, numeric_grad(&bt, f_b).data()) < 1e-4);
    }
}
