//! Stacks of 2D sinogram planes ordered by the plane table.

use ndarray::Array2;

use crate::error::{Error, Result};

/// One sinogram plane, `radial_bins x angle_bins`.
pub type Plane = Array2<f32>;

#[derive(Debug, Clone, PartialEq)]
pub struct SinogramStack {
    pub planes: Vec<Plane>,
    pub counts_are_integer: bool,
}

impl SinogramStack {
    pub fn new(planes: Vec<Plane>, counts_are_integer: bool) -> Self {
        Self {
            planes,
            counts_are_integer,
        }
    }

    pub fn zeros(num_planes: usize, radial_bins: usize, angle_bins: usize) -> Self {
        Self::new(vec![Plane::zeros((radial_bins, angle_bins)); num_planes], false)
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    /// `(radial_bins, angle_bins)` of the first plane.
    pub fn plane_dim(&self) -> Option<(usize, usize)> {
        self.planes.first().map(|p| p.dim())
    }

    pub fn total(&self) -> f64 {
        self.planes.iter().map(|p| p.iter().map(|&v| v as f64).sum::<f64>()).sum()
    }

    pub fn check_compatible(&self, num_planes: usize, dim: (usize, usize)) -> Result<()> {
        if self.len() != num_planes {
            return Err(Error::Shape(format!(
                "stack has {} planes, expected {num_planes}",
                self.len()
            )));
        }
        if let Some(p) = self.planes.iter().find(|p| p.dim() != dim) {
            return Err(Error::Shape(format!("plane is {:?}, expected {dim:?}", p.dim())));
        }
        Ok(())
    }
}
