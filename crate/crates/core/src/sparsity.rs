//! Chessboard crystal removal and the sinogram masks it induces.

use ndarray::{Array2, Zip};
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::geometry::{PlaneTable, ScannerGeometry};
use crate::rng::stream_rng;
use crate::stack::SinogramStack;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Parity {
    Black,
    White,
}

impl Parity {
    pub const BOTH: [Parity; 2] = [Parity::Black, Parity::White];

    pub fn bit(self) -> usize {
        match self {
            Parity::Black => 0,
            Parity::White => 1,
        }
    }

    pub fn complement(self) -> Self {
        match self {
            Parity::Black => Parity::White,
            Parity::White => Parity::Black,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Parity::Black => "black",
            Parity::White => "white",
        }
    }
}

impl std::str::FromStr for Parity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "black" => Ok(Parity::Black),
            "white" => Ok(Parity::White),
            other => Err(Error::Pattern(format!("unknown parity '{other}'"))),
        }
    }
}

/// Chessboard of `block_w x block_h` crystal squares; squares of the given
/// parity are removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrystalPattern {
    pub block_w: usize,
    pub block_h: usize,
    pub parity: Parity,
}

impl CrystalPattern {
    pub fn one_by_one(parity: Parity) -> Self {
        Self {
            block_w: 1,
            block_h: 1,
            parity,
        }
    }
}

/// Which crystals survive, indexed `(ring, index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrystalMask {
    pub kept: Array2<bool>,
}

impl CrystalMask {
    pub fn all_kept(geom: &ScannerGeometry) -> Self {
        Self {
            kept: Array2::from_elem((geom.num_rings, geom.crystals_per_ring), true),
        }
    }

    pub fn none_kept(geom: &ScannerGeometry) -> Self {
        Self {
            kept: Array2::from_elem((geom.num_rings, geom.crystals_per_ring), false),
        }
    }

    pub fn is_kept(&self, ring: usize, index: usize) -> bool {
        self.kept[[ring, index]]
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }
}

pub fn chessboard_mask(geom: &ScannerGeometry, pattern: CrystalPattern) -> Result<CrystalMask> {
    let CrystalPattern {
        block_w,
        block_h,
        parity,
    } = pattern;
    if block_w == 0 || block_h == 0 {
        return Err(Error::Pattern("block sizes must be >= 1".into()));
    }
    if geom.crystals_per_ring % (2 * block_w) != 0 {
        return Err(Error::Pattern(format!(
            "crystals_per_ring {} not divisible by 2 * block_w = {}",
            geom.crystals_per_ring,
            2 * block_w
        )));
    }
    let kept = Array2::from_shape_fn((geom.num_rings, geom.crystals_per_ring), |(r, i)| {
        (i / block_w + r / block_h) % 2 != parity.bit()
    });
    Ok(CrystalMask { kept })
}

/// Fraction of in-acceptance lines of response whose two crystals both
/// survive, by exhaustive enumeration.
pub fn lor_retention(geom: &ScannerGeometry, mask: &CrystalMask) -> f64 {
    let table = PlaneTable::new(geom);
    let (mut kept, mut total) = (0u64, 0u64);
    for plane in table.planes() {
        for &(ra, rb) in &plane.ring_pairs {
            for r in 0..geom.radial_bins {
                for v in 0..geom.angle_bins {
                    let (a, b) = geom.bin_crystals(r, v);
                    total += 1;
                    if mask.is_kept(ra, a) && mask.is_kept(rb, b) {
                        kept += 1;
                    }
                }
            }
        }
    }
    kept as f64 / total as f64
}

/// Per-plane survival weights (fraction of contributing LORs kept) with the
/// derived zero and affected masks.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneMaskSet {
    pub weights: Vec<Array2<f32>>,
}

impl PlaneMaskSet {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// True where every contributing LOR was removed.
    pub fn zero_mask(&self, plane: usize) -> Array2<bool> {
        self.weights[plane].mapv(|w| w == 0.0)
    }

    /// True where at least one contributing LOR was removed.
    pub fn affected_mask(&self, plane: usize) -> Array2<bool> {
        self.weights[plane].mapv(|w| w < 1.0)
    }

    pub fn affected_count(&self, plane: usize) -> usize {
        self.weights[plane].iter().filter(|&&w| w < 1.0).count()
    }

    pub fn as_stack(&self) -> SinogramStack {
        SinogramStack::new(self.weights.clone(), false)
    }

    pub fn from_stack(stack: SinogramStack) -> Result<Self> {
        if let Some(w) = stack.planes.iter().flat_map(|p| p.iter()).find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::Format(format!("mask weight {w} outside [0, 1]")));
        }
        Ok(Self {
            weights: stack.planes,
        })
    }
}

pub fn sinogram_masks(geom: &ScannerGeometry, mask: &CrystalMask) -> PlaneMaskSet {
    let table = PlaneTable::new(geom);
    let weights = table
        .planes()
        .iter()
        .map(|plane| {
            let pairs = plane.ring_pairs.len() as f32;
            Array2::from_shape_fn((geom.radial_bins, geom.angle_bins), |(r, v)| {
                let (a, b) = geom.bin_crystals(r, v);
                let surviving = plane
                    .ring_pairs
                    .iter()
                    .filter(|&&(ra, rb)| mask.is_kept(ra, a) && mask.is_kept(rb, b))
                    .count();
                surviving as f32 / pairs
            })
        })
        .collect();
    PlaneMaskSet { weights }
}

/// Thins every bin with its survival weight. Integer stacks are thinned
/// binomially (the sinogram-space equivalent of deleting the removed LORs'
/// events); real-valued stacks are scaled by the weight.
pub fn apply_mask(stack: &SinogramStack, masks: &PlaneMaskSet, seed: u64) -> Result<SinogramStack> {
    if stack.len() != masks.len() {
        return Err(Error::Shape(format!(
            "stack has {} planes, masks have {}",
            stack.len(),
            masks.len()
        )));
    }
    let mut planes = Vec::with_capacity(stack.len());
    for (plane_id, (plane, weights)) in stack.planes.iter().zip(&masks.weights).enumerate() {
        if plane.dim() != weights.dim() {
            return Err(Error::Shape(format!(
                "plane {plane_id} is {:?}, mask is {:?}",
                plane.dim(),
                weights.dim()
            )));
        }
        let mut rng = stream_rng(seed, plane_id as u64);
        let mut out = plane.clone();
        Zip::from(&mut out).and(weights).for_each(|v, &w| {
            if w >= 1.0 {
                return;
            }
            if w <= 0.0 {
                *v = 0.0;
            } else if stack.counts_are_integer {
                let n = v.max(0.0).round() as u64;
                *v = Binomial::new(n, w as f64)
                    .expect("weight in (0, 1)")
                    .sample(&mut rng) as f32;
            } else {
                *v *= w;
            }
        });
        planes.push(out);
    }
    Ok(SinogramStack::new(planes, stack.counts_are_integer))
}
