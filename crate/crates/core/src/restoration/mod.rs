//! Sinogram restoration with a residual U-Net: model, loss, training and
//! inference with reinstatement of unaffected bins.

pub mod io;
pub mod model;
pub mod train;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::neural::Tensor;
use crate::sparsity::PlaneMaskSet;
use crate::stack::{Plane, SinogramStack};

pub use io::{load_model, read_model, save_model, write_model};
pub use model::{build_model, ModelConfig, ResUNet, ResidualBlock};
pub use train::{loss, train, EarlyStopping, EpochRecord, History, PlaneSample, StopReason, TrainConfig};

/// Per-plane scaling into `[0, 1]`.
///
/// The factor is the smallest power of two not below the plane maximum, so
/// scaling and unscaling are exact in floating point. A factor of 0 marks an
/// all-zero (or non-positive) plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub factor: f32,
}

impl Normalization {
    pub fn of(values: &[f32]) -> Self {
        let max = values.iter().copied().fold(0.0f32, f32::max);
        let factor = if max > 0.0 && max.is_finite() {
            2f32.powi(max.log2().ceil() as i32)
        } else {
            0.0
        };
        // log2 rounding can land one power short
        let factor = if factor > 0.0 && factor < max { factor * 2.0 } else { factor };
        Self { factor }
    }

    pub fn is_degenerate(&self) -> bool {
        self.factor == 0.0
    }

    pub fn normalize(&self, values: &[f32]) -> Vec<f32> {
        if self.is_degenerate() {
            return values.to_vec();
        }
        values.iter().map(|v| v / self.factor).collect()
    }

    pub fn denormalize(&self, values: &[f32]) -> Vec<f32> {
        if self.is_degenerate() {
            return values.to_vec();
        }
        values.iter().map(|v| v * self.factor).collect()
    }
}

fn plane_values(p: &Plane) -> Vec<f32> {
    p.iter().copied().collect()
}

/// Restores several equally sized planes in one batched network pass.
pub fn restore_planes(model: &ResUNet<f32>, planes: &[&Plane], masks: &[&Array2<bool>]) -> Result<Vec<Plane>> {
    if planes.len() != masks.len() {
        return Err(Error::Shape(format!("{} planes with {} masks", planes.len(), masks.len())));
    }
    let mut out: Vec<Plane> = planes.iter().map(|&p| p.clone()).collect();
    let mut work = Vec::new();
    for (k, (&p, &m)) in planes.iter().zip(masks).enumerate() {
        if p.dim() != m.dim() {
            return Err(Error::Shape(format!("plane {:?} with mask {:?}", p.dim(), m.dim())));
        }
        let values = plane_values(p);
        let norm = Normalization::of(&values);
        if norm.is_degenerate() || !m.iter().any(|&b| b) {
            continue;
        }
        work.push((k, norm, norm.normalize(&values)));
    }
    let Some(&(first, _, _)) = work.first() else {
        return Ok(out);
    };
    let (h, w) = planes[first].dim();
    if work.iter().any(|(k, _, _)| planes[*k].dim() != (h, w)) {
        return Err(Error::Shape("batched planes differ in size".into()));
    }
    let mut data = Vec::with_capacity(work.len() * h * w);
    for (_, _, v) in &work {
        data.extend_from_slice(v);
    }
    let x = Tensor::from_vec([work.len(), 1, h, w], data)?;
    let y = model.predict(&x)?;
    for (i, (k, norm, _)) in work.iter().enumerate() {
        let restored = norm.denormalize(y.sample(i));
        let mask = masks[*k];
        for ((v, &m), &r) in out[*k].iter_mut().zip(mask.iter()).zip(&restored) {
            if m {
                *v = r.max(0.0);
            }
        }
    }
    Ok(out)
}

/// Network output on affected bins (denormalized, clamped at 0); the
/// distorted value everywhere else.
pub fn restore_plane(model: &ResUNet<f32>, distorted: &Plane, affected: &Array2<bool>) -> Result<Plane> {
    Ok(restore_planes(model, &[distorted], &[affected])?.remove(0))
}

pub fn restore_stack(model: &ResUNet<f32>, distorted: &SinogramStack, masks: &PlaneMaskSet) -> Result<SinogramStack> {
    if distorted.len() != masks.len() {
        return Err(Error::Shape(format!(
            "stack has {} planes, mask set has {}",
            distorted.len(),
            masks.len()
        )));
    }
    const BATCH: usize = 16;
    let affected: Vec<Array2<bool>> = (0..masks.len()).map(|p| masks.affected_mask(p)).collect();
    let mut planes = Vec::with_capacity(distorted.len());
    for start in (0..distorted.len()).step_by(BATCH) {
        let end = (start + BATCH).min(distorted.len());
        let p: Vec<&Plane> = distorted.planes[start..end].iter().collect();
        let m: Vec<&Array2<bool>> = affected[start..end].iter().collect();
        planes.extend(restore_planes(model, &p, &m)?);
    }
    Ok(SinogramStack::new(planes, false))
}
