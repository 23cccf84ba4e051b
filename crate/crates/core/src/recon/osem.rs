use ndarray::Array2;

use crate::error::{Error, Result};

use super::filter::gaussian_postfilter;
use super::projector::SystemMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct ReconConfig {
    pub image_size: usize,
    pub pixel_mm: f64,
    pub subsets: usize,
    pub iterations: usize,
    pub postfilter_fwhm_mm: f64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            image_size: 96,
            pixel_mm: 1.25,
            subsets: 28,
            iterations: 2,
            postfilter_fwhm_mm: 5.0,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self, angle_bins: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.subsets == 0 || self.subsets > angle_bins {
            return Err(Error::Config(format!(
                "subsets must be in 1..={angle_bins}, got {}",
                self.subsets
            )));
        }
        if self.image_size == 0 || !(self.pixel_mm > 0.0) || !(self.postfilter_fwhm_mm >= 0.0) {
            return Err(Error::Config("invalid image grid or postfilter".into()));
        }
        Ok(())
    }
}

/// OSEM over angle-interleaved subsets (subset `k` holds the views with
/// `v % subsets == k`), followed by the postfilter. `hook` sees the
/// unfiltered image after every full iteration.
pub fn osem_with_hook(
    sino: &Array2<f64>,
    a: &SystemMatrix,
    cfg: &ReconConfig,
    mut hook: impl FnMut(usize, &Array2<f64>),
) -> Result<Array2<f64>> {
    cfg.validate(a.angle_bins)?;
    if sino.dim() != a.sinogram_dim() {
        return Err(Error::Shape(format!("sinogram {:?} vs {:?}", sino.dim(), a.sinogram_dim())));
    }
    if let Some(v) = sino.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Degenerate(format!("sinogram value {v} is negative or not finite")));
    }
    let s = cfg.subsets;
    let ones = Array2::from_elem(a.sinogram_dim(), 1.0);
    let sens: Vec<Array2<f64>> = (0..s)
        .map(|k| a.backproject_subset(&ones, |v| v % s == k))
        .collect::<Result<_>>()?;
    // start uniform over the pixels any ray sees
    let total_sens = sens.iter().fold(Array2::<f64>::zeros(a.image_dim()), |acc, x| acc + x);
    let mut x = total_sens.mapv(|s| if s > 0.0 { 1.0 } else { 0.0 });
    for it in 0..cfg.iterations {
        for (k, sk) in sens.iter().enumerate() {
            let keep = |v: usize| v % s == k;
            let est = a.project_subset(&x, keep)?;
            let ratio = ndarray::Zip::from(sino)
                .and(&est)
                .map_collect(|&y, &e| if e > 0.0 { y / e } else { 0.0 });
            let back = a.backproject_subset(&ratio, keep)?;
            ndarray::Zip::from(&mut x).and(&back).and(sk).for_each(|xi, &b, &sj| {
                if sj > 0.0 {
                    *xi *= b / sj;
                }
            });
        }
        hook(it, &x);
    }
    Ok(gaussian_postfilter(&x, cfg.postfilter_fwhm_mm, cfg.pixel_mm))
}

pub fn osem(sino: &Array2<f64>, a: &SystemMatrix, cfg: &ReconConfig) -> Result<Array2<f64>> {
    osem_with_hook(sino, a, cfg, |_, _| {})
}

/// Unfiltered MLEM (one subset).
pub fn mlem(
    sino: &Array2<f64>,
    a: &SystemMatrix,
    iterations: usize,
    hook: impl FnMut(usize, &Array2<f64>),
) -> Result<Array2<f64>> {
    let cfg = ReconConfig {
        image_size: a.grid.size,
        pixel_mm: a.grid.pixel_mm,
        subsets: 1,
        iterations,
        postfilter_fwhm_mm: 0.0,
    };
    osem_with_hook(sino, a, &cfg, hook)
}
