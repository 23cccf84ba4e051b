//! Interpolation baseline: affected sinogram bins are filled by
//! Clough-Tocher interpolation over the surviving bins of the same plane,
//! in (radial index, angle index) coordinates.

pub mod clough_tocher;
pub mod delaunay;

use log::warn;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::{PlaneKind, PlaneTable};
use crate::sparsity::PlaneMaskSet;
use crate::stack::{Plane, SinogramStack};

pub use clough_tocher::CloughTocher;
pub use delaunay::{delaunay_triangulate, Triangulation};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillStatus {
    /// nothing to fill
    Untouched,
    Filled,
    /// too few or collinear reference bins; plane returned as is
    InsufficientReference,
}

/// Fills the bins whose survival weight is 0. Every bin with a positive
/// weight is a reference point at its current value, so weight-1/2 bins of
/// summed planes keep their (low) counts and also feed the interpolant.
/// Filled values are clamped at 0.
pub fn fill_sinogram(distorted: &Plane, weights: &Array2<f32>) -> Result<(Plane, FillStatus)> {
    if distorted.dim() != weights.dim() {
        return Err(Error::Shape(format!(
            "plane {:?} with weights {:?}",
            distorted.dim(),
            weights.dim()
        )));
    }
    let mut points = Vec::new();
    let mut values = Vec::new();
    let mut queries = Vec::new();
    let mut targets = Vec::new();
    for ((r, v), &w) in weights.indexed_iter() {
        let p = [r as f64, v as f64];
        if w > 0.0 {
            points.push(p);
            values.push(distorted[[r, v]] as f64);
        } else {
            queries.push(p);
            targets.push((r, v));
        }
    }
    let mut out = distorted.clone();
    if queries.is_empty() {
        return Ok((out, FillStatus::Untouched));
    }
    let ct = match CloughTocher::new(&points, &values) {
        Ok(ct) => ct,
        Err(Error::Degenerate(msg)) => {
            warn!("interpolation skipped: {msg}");
            return Ok((out, FillStatus::InsufficientReference));
        }
        Err(e) => return Err(e),
    };
    for (&(r, v), value) in targets.iter().zip(ct.eval_many(&queries)) {
        out[[r, v]] = value.max(0.0) as f32;
    }
    Ok((out, FillStatus::Filled))
}

pub fn fill_stack(distorted: &SinogramStack, masks: &PlaneMaskSet) -> Result<(SinogramStack, Vec<FillStatus>)> {
    if distorted.len() != masks.len() {
        return Err(Error::Shape(format!(
            "stack has {} planes, masks have {}",
            distorted.len(),
            masks.len()
        )));
    }
    let mut planes = Vec::with_capacity(distorted.len());
    let mut status = Vec::with_capacity(distorted.len());
    for (p, w) in distorted.planes.iter().zip(&masks.weights) {
        let (plane, s) = fill_sinogram(p, w)?;
        planes.push(plane);
        status.push(s);
    }
    Ok((SinogramStack::new(planes, false), status))
}

/// Global correction for summed cross planes: every bin that lost counts
/// (weight below 1, i.e. the half-weight references and the values
/// interpolated from them) is scaled by the number of merged ring pairs.
/// Other planes are returned unchanged.
pub fn global_scale_boost(interpolated: &SinogramStack, masks: &PlaneMaskSet, table: &PlaneTable) -> Result<SinogramStack> {
    if interpolated.len() != masks.len() || interpolated.len() != table.len() {
        return Err(Error::Shape(format!(
            "stack {} planes, masks {}, plane table {}",
            interpolated.len(),
            masks.len(),
            table.len()
        )));
    }
    let mut out = interpolated.clone();
    out.counts_are_integer = false;
    for (id, desc) in table.planes().iter().enumerate() {
        if desc.kind != PlaneKind::SummedRd1 {
            continue;
        }
        let factor = desc.ring_pairs.len() as f32;
        ndarray::Zip::from(&mut out.planes[id])
            .and(&masks.weights[id])
            .for_each(|v, &w| {
                if w < 1.0 {
                    *v *= factor;
                }
            });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ScannerGeometry;
    use crate::sparsity::{chessboard_mask, sinogram_masks, CrystalPattern, Parity};

    fn mock_masks() -> (ScannerGeometry, PlaneMaskSet) {
        let g = ScannerGeometry::mock();
        let m = chessboard_mask(&g, CrystalPattern::one_by_one(Parity::Black)).unwrap();
        let masks = sinogram_masks(&g, &m);
        (g, masks)
    }

    #[test]
    fn empty_mask_is_identity() {
        let p = Array2::from_shape_fn((9, 8), |(r, v)| (r * v) as f32);
        let w = Array2::from_elem((9, 8), 1.0f32);
        let (out, s) = fill_sinogram(&p, &w).unwrap();
        assert_eq!(out, p);
        assert_eq!(s, FillStatus::Untouched);
    }

    #[test]
    fn constant_plane_is_filled_constant() {
        let (g, masks) = mock_masks();
        let p = Array2::from_elem((g.radial_bins, g.angle_bins), 7.0f32);
        let w = &masks.weights[0];
        let distorted = Array2::from_shape_fn(p.dim(), |i| if w[i] > 0.0 { 7.0 } else { 0.0 });
        let (out, s) = fill_sinogram(&distorted, w).unwrap();
        assert_eq!(s, FillStatus::Filled);
        assert!(out.iter().all(|&v| (v - 7.0).abs() < 1e-6));
    }

    #[test]
    fn reference_bins_pass_through() {
        let (_, masks) = mock_masks();
        let w = &masks.weights[20];
        let p = Array2::from_shape_fn(w.dim(), |(r, v)| if w[[r, v]] > 0.0 { (r as f32 * 0.3).sin().abs() * 9.0 + v as f32 } else { 0.0 });
        let (out, _) = fill_sinogram(&p, w).unwrap();
        for ((o, i), &wt) in out.iter().zip(&p).zip(w) {
            if wt > 0.0 {
                assert_eq!(o.to_bits(), i.to_bits());
            }
            assert!(*o >= 0.0);
        }
    }

    #[test]
    fn too_few_references() {
        let p = Array2::from_elem((4, 4), 1.0f32);
        let mut w = Array2::zeros((4, 4));
        w[[0, 0]] = 1.0;
        w[[1, 1]] = 1.0;
        let (out, s) = fill_sinogram(&p, &w).unwrap();
        assert_eq!(s, FillStatus::InsufficientReference);
        assert_eq!(out, p);
        w[[2, 2]] = 1.0;
        assert_eq!(fill_sinogram(&p, &w).unwrap().1, FillStatus::InsufficientReference);
    }

    #[test]
    fn boost_doubles_summed_planes_only() {
        let (g, masks) = mock_masks();
        let table = PlaneTable::new(&g);
        let stack = SinogramStack::new(
            (0..masks.len())
                .map(|i| Array2::from_elem((g.radial_bins, g.angle_bins), 1.0 + i as f32))
                .collect(),
            false,
        );
        let boosted = global_scale_boost(&stack, &masks, &table).unwrap();
        for (id, d) in table.planes().iter().enumerate() {
            let (a, b, w) = (&stack.planes[id], &boosted.planes[id], &masks.weights[id]);
            if d.kind == PlaneKind::SummedRd1 {
                for ((x, y), &wt) in a.iter().zip(b).zip(w) {
                    if wt == 0.5 {
                        assert_eq!(*y, 2.0 * x);
                    }
                }
            } else {
                assert_eq!(a, b);
            }
        }
    }
}
