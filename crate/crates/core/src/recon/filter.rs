use ndarray::Array2;

/// Separable Gaussian blur of `fwhm_mm`. Each pixel's mass is spread over a
/// kernel truncated at 4 sigma; mass falling outside the image is reflected
/// back at the border, so the total is preserved.
pub fn gaussian_postfilter(image: &Array2<f64>, fwhm_mm: f64, pixel_mm: f64) -> Array2<f64> {
    if !(fwhm_mm > 0.0) {
        return image.clone();
    }
    let sigma = fwhm_mm / (2.0 * (2.0 * 2f64.ln()).sqrt()) / pixel_mm;
    let radius = (4.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);
    let rows = blur_axis(image, &kernel, radius, true);
    blur_axis(&rows, &kernel, radius, false)
}

fn reflect(i: i64, n: i64) -> usize {
    // half-sample symmetric: -1 -> 0, n -> n - 1
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn blur_axis(image: &Array2<f64>, kernel: &[f64], radius: i64, along_x: bool) -> Array2<f64> {
    let (h, w) = image.dim();
    let mut out = Array2::zeros((h, w));
    for ((y, x), &v) in image.indexed_iter() {
        if v == 0.0 {
            continue;
        }
        for (k, &kw) in kernel.iter().enumerate() {
            let off = k as i64 - radius;
            if along_x {
                out[[y, reflect(x as i64 + off, w as i64)]] += v * kw;
            } else {
                out[[reflect(y as i64 + off, h as i64), x]] += v * kw;
            }
        }
    }
    out
}
