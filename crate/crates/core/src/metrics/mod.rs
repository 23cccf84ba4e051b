//! Evaluation metrics: plane comparisons, pixel correlation and ROI
//! statistics. Hypothesis tests live in [`stats`].

pub mod stats;

use ndarray::Array2;
use rand::seq::index;

use crate::error::{Error, Result};
use crate::neural::ssim;
use crate::rng::stream_rng;

pub use stats::{fisher_z_compare, mann_whitney_u, percentile, BoxSummary, MannWhitney, PValueMethod};

/// SSIM window used everywhere, shared with the training loss.
pub const SSIM_WINDOW: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneComparison {
    pub ssim: f64,
    pub mae_full: f64,
    /// `None` when the mask selects no pixel.
    pub mae_masked: Option<f64>,
}

fn same_dim<A, B>(a: &Array2<A>, b: &Array2<B>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

fn to_f64<T: Copy + Into<f64>>(a: &Array2<T>) -> Vec<f64> {
    a.iter().map(|&v| v.into()).collect()
}

/// SSIM with dynamic range `l`, plus MAE over all pixels and over `mask`.
pub fn compare_planes<T: Copy + Into<f64>>(a: &Array2<T>, b: &Array2<T>, l: f64, mask: &Array2<bool>) -> Result<PlaneComparison> {
    same_dim(a, b, "compared planes")?;
    same_dim(a, mask, "comparison mask")?;
    let (h, w) = a.dim();
    let (av, bv) = (to_f64(a), to_f64(b));
    let s = ssim(&av, &bv, h, w, l, SSIM_WINDOW.min(h).min(w))?;
    let mae_full = av.iter().zip(&bv).map(|(x, y)| (x - y).abs()).sum::<f64>() / av.len() as f64;
    let (mut sum, mut n) = (0.0, 0usize);
    for ((x, y), &m) in av.iter().zip(&bv).zip(mask.iter()) {
        if m {
            sum += (x - y).abs();
            n += 1;
        }
    }
    Ok(PlaneComparison {
        ssim: s,
        mae_full,
        mae_masked: (n > 0).then(|| sum / n as f64),
    })
}

/// Dynamic range for comparing `a` against reference `b`: the larger
/// maximum of the two, or 1 if both are non-positive.
pub fn dynamic_range<T: Copy + Into<f64>>(a: &Array2<T>, b: &Array2<T>) -> f64 {
    let m = a.iter().chain(b.iter()).map(|&v| v.into()).fold(f64::NEG_INFINITY, f64::max);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub r: f64,
    pub slope: f64,
    pub intercept: f64,
    pub n: usize,
}

/// Pearson r and least-squares fit `y = slope * x + intercept`.
pub fn correlation(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("correlation of {} and {} values", x.len(), y.len())));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("correlation needs 2 points, got {n}")));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("zero variance in correlation sample".into()));
    }
    let slope = sxy / sxx;
    Ok(Correlation {
        r: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        slope,
        intercept: my - slope * mx,
        n,
    })
}

/// Seeded sample of `sample_size` pixel pairs without replacement (all
/// pixels, in order, if the planes are smaller than that).
pub fn sample_pixels<T: Copy + Into<f64>>(a: &Array2<T>, b: &Array2<T>, sample_size: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    same_dim(a, b, "correlated planes")?;
    let (av, bv) = (to_f64(a), to_f64(b));
    if sample_size >= av.len() {
        return Ok((av, bv));
    }
    let mut rng = stream_rng(seed, 0);
    let mut idx = index::sample(&mut rng, av.len(), sample_size).into_vec();
    idx.sort_unstable();
    Ok((idx.iter().map(|&i| av[i]).collect(), idx.iter().map(|&i| bv[i]).collect()))
}

/// Correlation of `b` against `a` over a seeded pixel sample.
pub fn pixel_correlation<T: Copy + Into<f64>>(a: &Array2<T>, b: &Array2<T>, sample_size: usize, seed: u64) -> Result<Correlation> {
    if sample_size < 2 {
        return Err(Error::Degenerate(format!("sample size {sample_size} < 2")));
    }
    let (x, y) = sample_pixels(a, b, sample_size, seed)?;
    correlation(&x, &y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiStats {
    pub mean: f64,
    /// population standard deviation
    pub std: f64,
    pub voxel_count: usize,
}

impl RoiStats {
    /// Background variability `std / mean * 100` (percent).
    pub fn bv(&self) -> Result<f64> {
        if self.mean == 0.0 {
            return Err(Error::Undefined("BV of a zero-mean ROI".into()));
        }
        Ok(self.std / self.mean * 100.0)
    }
}

pub fn roi_stats(image: &Array2<f64>, roi: &Array2<bool>) -> Result<RoiStats> {
    same_dim(image, roi, "roi")?;
    let vals: Vec<f64> = image.iter().zip(roi.iter()).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    if vals.is_empty() {
        return Err(Error::Empty("roi selects no pixel".into()));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(RoiStats {
        mean,
        std: var.sqrt(),
        voxel_count: vals.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiMetrics {
    pub bv_background: f64,
    pub bv_bladder: f64,
    pub rbv_background: f64,
    pub rbv_bladder: f64,
    /// contrast recovery, percent
    pub cr: f64,
}

/// BV of `restored` in both ROIs, its ratio to the BV of `original`, and
/// contrast recovery of bladder over background.
pub fn roi_metrics(restored: &Array2<f64>, original: &Array2<f64>, bladder: &Array2<bool>, background: &Array2<bool>) -> Result<RoiMetrics> {
    same_dim(restored, original, "roi images")?;
    let rb = roi_stats(restored, bladder)?;
    let rg = roi_stats(restored, background)?;
    let ob = roi_stats(original, bladder)?;
    let og = roi_stats(original, background)?;
    let ratio = |r: f64, o: f64, what: &str| {
        if o == 0.0 {
            Err(Error::Undefined(format!("rBV with zero original {what} BV")))
        } else {
            Ok(r / o)
        }
    };
    let contrast = ob.mean - og.mean;
    if contrast == 0.0 {
        return Err(Error::Undefined("CR with zero original contrast".into()));
    }
    let (bv_background, bv_bladder) = (rg.bv()?, rb.bv()?);
    Ok(RoiMetrics {
        bv_background,
        bv_bladder,
        rbv_background: ratio(bv_background, og.bv()?, "background")?,
        rbv_bladder: ratio(bv_bladder, ob.bv()?, "bladder")?,
        cr: (rb.mean - rg.mean) / contrast * 100.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_plane(seed: u64, h: usize, w: usize) -> Array2<f64> {
        let mut rng = stream_rng(seed, 3);
        Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..10.0))
    }

    #[test]
    fn identical_planes() {
        let a = random_plane(1, 16, 12);
        let mask = Array2::from_elem(a.dim(), true);
        let c = compare_planes(&a, &a, 10.0, &mask).unwrap();
        assert_eq!((c.ssim, c.mae_full, c.mae_masked), (1.0, 0.0, Some(0.0)));
    }

    #[test]
    fn offset_by_one() {
        let a = random_plane(2, 16, 12);
        let b = a.mapv(|v| v + 1.0);
        let c = compare_planes(&a, &b, 11.0, &Array2::from_elem(a.dim(), false)).unwrap();
        assert!((c.mae_full - 1.0).abs() < 1e-12);
        assert_eq!(c.mae_masked, None);
        assert!(compare_planes(&a, &random_plane(2, 15, 12), 1.0, &Array2::from_elem(a.dim(), true)).is_err());
    }

    // scalar-loop oracle: same accumulation order, so equality is exact
    fn ssim_oracle(a: &Array2<f64>, b: &Array2<f64>, l: f64, win: usize) -> f64 {
        let (h, w) = a.dim();
        let (c1, c2) = ((0.01 * l) * (0.01 * l), (0.03 * l) * (0.03 * l));
        let n = (win * win) as f64;
        let mut total = 0.0;
        for y0 in 0..=h - win {
            for x0 in 0..=w - win {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in y0..y0 + win {
                    for x in x0..x0 + win {
                        let (p, q) = (a[[y, x]], b[[y, x]]);
                        sa += p;
                        sb += q;
                        saa += p * p;
                        sbb += q * q;
                        sab += p * q;
                    }
                }
                let (ma, mb) = (sa / n, sb / n);
                let num = (2.0 * ma * mb + c1) * (2.0 * (sab / n - ma * mb) + c2);
                let den = (ma * ma + mb * mb + c1) * ((saa / n - ma * ma) + (sbb / n - mb * mb) + c2);
                total += num / den;
            }
        }
        total / ((h - win + 1) * (w - win + 1)) as f64
    }

    #[test]
    fn matches_scalar_loop() {
        for seed in 0..10 {
            let a = random_plane(seed, 20, 17);
            let b = random_plane(seed + 100, 20, 17);
            let mask = random_plane(seed + 200, 20, 17).mapv(|v| v > 5.0);
            let c = compare_planes(&a, &b, 10.0, &mask).unwrap();
            assert_eq!(c.ssim, ssim_oracle(&a, &b, 10.0, SSIM_WINDOW));
            let (mut s, mut n) = (0.0, 0);
            for i in 0..20 {
                for j in 0..17 {
                    if mask[[i, j]] {
                        s += (a[[i, j]] - b[[i, j]]).abs();
                        n += 1;
                    }
                }
            }
            assert_eq!(c.mae_masked, Some(s / n as f64));
        }
    }

    proptest! {
        #[test]
        fn ssim_is_symmetric(seed in 0u64..1000) {
            let a = random_plane(seed, 12, 9);
            let b = random_plane(seed ^ 77, 12, 9);
            let mask = Array2::from_elem(a.dim(), true);
            let ab = compare_planes(&a, &b, 10.0, &mask).unwrap().ssim;
            let ba = compare_planes(&b, &a, 10.0, &mask).unwrap().ssim;
            prop_assert!((ab - ba).abs() <= 1e-12);
        }

        #[test]
        fn rbv_is_scale_invariant(seed in 0u64..1000, k in 0.01f64..100.0) {
            let (o, r, bl, bg) = roi_case(seed);
            let m = roi_metrics(&r, &o, &bl, &bg).unwrap();
            let s = roi_metrics(&r.mapv(|v| v * k), &o.mapv(|v| v * k), &bl, &bg).unwrap();
            prop_assert!((m.rbv_background - s.rbv_background).abs() < 1e-9 * m.rbv_background);
            prop_assert!((m.rbv_bladder - s.rbv_bladder).abs() < 1e-9 * m.rbv_bladder);
        }

        #[test]
        fn cr_uses_differences(seed in 0u64..1000, c in -5.0f64..5.0) {
            // a constant added to every ROI pixel of one image cancels in
            // that image's bladder - background difference
            let (o, r, bl, bg) = roi_case(seed);
            let m = roi_metrics(&r, &o, &bl, &bg).unwrap();
            let shifted = r.mapv(|v| v + c);
            let s = roi_metrics(&shifted, &o, &bl, &bg).unwrap();
            prop_assert!((m.cr - s.cr).abs() < 1e-9 * m.cr.abs().max(1.0));
            let rb = roi_stats(&r, &bl).unwrap().mean;
            let rg = roi_stats(&r, &bg).unwrap().mean;
            let ob = roi_stats(&o, &bl).unwrap().mean;
            let og = roi_stats(&o, &bg).unwrap().mean;
            prop_assert!((m.cr - (rb - rg) / (ob - og) * 100.0).abs() < 1e-9 * m.cr.abs().max(1.0));
        }
    }

    fn roi_case(seed: u64) -> (Array2<f64>, Array2<f64>, Array2<bool>, Array2<bool>) {
        let o = random_plane(seed, 8, 8).mapv(|v| v + 1.0);
        let mut r = random_plane(seed + 1, 8, 8).mapv(|v| v + 1.0);
        let bl = Array2::from_shape_fn((8, 8), |(i, j)| i < 3 && j < 3);
        let bg = Array2::from_shape_fn((8, 8), |(i, j)| i >= 5 && j >= 4);
        let mut o = o;
        for ((i, j), v) in o.indexed_iter_mut() {
            if bl[[i, j]] {
                *v += 30.0;
            }
        }
        for ((i, j), v) in r.indexed_iter_mut() {
            if bl[[i, j]] {
                *v += 25.0;
            }
        }
        (o, r, bl, bg)
    }

    #[test]
    fn roi_identity_and_half_scale() {
        let (o, _, bl, bg) = roi_case(4);
        let m = roi_metrics(&o, &o, &bl, &bg).unwrap();
        assert_eq!((m.rbv_background, m.rbv_bladder, m.cr), (1.0, 1.0, 100.0));
        let h = roi_metrics(&o.mapv(|v| v * 0.5), &o, &bl, &bg).unwrap();
        assert!((h.cr - 50.0).abs() < 1e-12);
        assert!((h.rbv_background - 1.0).abs() < 1e-12 && (h.rbv_bladder - 1.0).abs() < 1e-12);
    }

    #[test]
    fn roi_hand_built_3x3() {
        #[rustfmt::skip]
        let o = Array2::from_shape_vec((3, 3), vec![
            9.0, 11.0, 1.0,
            10.0, 10.0, 2.0,
            1.0, 2.0, 3.0,
        ]).unwrap();
        let r = o.mapv(|v| v + (v * 7.0) % 3.0);
        let bl = Array2::from_shape_vec((3, 3), vec![true, true, false, true, true, false, false, false, false]).unwrap();
        let bg = bl.mapv(|b| !b);
        let m = roi_metrics(&r, &o, &bl, &bg).unwrap();
        let stats = |img: &Array2<f64>, roi: &Array2<bool>| {
            let mut v = Vec::new();
            for i in 0..3 {
                for j in 0..3 {
                    if roi[[i, j]] {
                        v.push(img[[i, j]]);
                    }
                }
            }
            let mut s = 0.0;
            for x in &v {
                s += x;
            }
            let mean = s / v.len() as f64;
            let mut ss = 0.0;
            for x in &v {
                ss += (x - mean) * (x - mean);
            }
            (mean, (ss / v.len() as f64).sqrt())
        };
        let (rbm, rbs) = stats(&r, &bl);
        let (rgm, rgs) = stats(&r, &bg);
        let (obm, obs) = stats(&o, &bl);
        let (ogm, ogs) = stats(&o, &bg);
        assert_eq!(m.bv_bladder, rbs / rbm * 100.0);
        assert_eq!(m.bv_background, rgs / rgm * 100.0);
        assert_eq!(m.rbv_bladder, (rbs / rbm * 100.0) / (obs / obm * 100.0));
        assert_eq!(m.rbv_background, (rgs / rgm * 100.0) / (ogs / ogm * 100.0));
        assert_eq!(m.cr, (rbm - rgm) / (obm - ogm) * 100.0);
    }

    #[test]
    fn roi_errors() {
        let img = Array2::zeros((3, 3));
        let all = Array2::from_elem((3, 3), true);
        assert!(matches!(roi_stats(&img, &all.mapv(|_| false)), Err(Error::Empty(_))));
        assert!(matches!(roi_stats(&img, &all).unwrap().bv(), Err(Error::Undefined(_))));
        let one = Array2::from_elem((3, 3), 1.0);
        let half = Array2::from_shape_fn((3, 3), |(i, _)| i == 0);
        assert!(matches!(roi_metrics(&one, &one, &half, &half.mapv(|b| !b)), Err(Error::Undefined(_))));
    }

    #[test]
    fn correlation_exact_lines() {
        let a = random_plane(9, 10, 10);
        let c = pixel_correlation(&a, &a, 50, 1).unwrap();
        assert!((c.r - 1.0).abs() < 1e-12 && (c.slope - 1.0).abs() < 1e-12 && c.intercept.abs() < 1e-12);
        assert_eq!(c.n, 50);
        let b = a.mapv(|v| 2.0 * v + 3.0);
        let c = pixel_correlation(&a, &b, 1000, 1).unwrap();
        assert!((c.r - 1.0).abs() < 1e-12 && (c.slope - 2.0).abs() < 1e-12 && (c.intercept - 3.0).abs() < 1e-11);
        assert_eq!(c.n, 100);
        assert!(pixel_correlation(&a, &Array2::zeros((10, 10)), 100, 1).is_err());
        assert!(pixel_correlation(&a, &a, 1, 1).is_err());
    }

    #[test]
    fn correlation_matches_normal_equations() {
        let mut rng = stream_rng(12, 0);
        let x: Vec<f64> = (0..20).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.7 * v - 1.0 + rng.random_range(-1.0..1.0)).collect();
        let c = correlation(&x, &y).unwrap();
        // [n sx; sx sxx] [b; m] = [sy; sxy] by Cramer's rule
        let n = 20.0;
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let syy: f64 = y.iter().map(|v| v * v).sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let det = n * sxx - sx * sx;
        let m = (n * sxy - sx * sy) / det;
        let b = (sxx * sy - sx * sxy) / det;
        let r = (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt());
        assert!((c.slope - m).abs() < 1e-12 * m.abs().max(1.0));
        assert!((c.intercept - b).abs() < 1e-12 * b.abs().max(1.0));
        assert!((c.r - r).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_seeded() {
        let a = random_plane(5, 30, 30);
        let b = random_plane(6, 30, 30);
        assert_eq!(sample_pixels(&a, &b, 100, 3).unwrap(), sample_pixels(&a, &b, 100, 3).unwrap());
        assert_ne!(sample_pixels(&a, &b, 100, 3).unwrap(), sample_pixels(&a, &b, 100, 4).unwrap());
    }
}
