//! Cylindrical multi-ring scanner, lines of response and the michelogram.
//!
//! Transaxial binning follows the usual interleaved crystal-pair layout: an
//! ordered crystal pair `(a, b)` with index difference `d = b - a (mod N)`
//! lands in view `v = a + floor(d / 2) (mod N)`. Exactly one of the two
//! orderings of an unordered pair yields `v < N / 2`, which makes the map
//! a bijection between unordered crystal pairs and `(d, v)` cells. Radial
//! acceptance keeps the `radial_bins` differences centred on `N / 2`
//! (diametrically opposite crystals).
//!
//! Axially, ring difference 0 gives direct planes, ring differences +1 and
//! -1 are summed into one plane per adjacent ring pair, and every other
//! ordered ring pair keeps its own oblique plane.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScannerGeometry {
    pub num_rings: usize,
    pub crystals_per_ring: usize,
    pub crystal_transaxial_pitch_mm: f64,
    pub crystal_axial_pitch_mm: f64,
    pub ring_radius_mm: f64,
    pub radial_bins: usize,
    pub angle_bins: usize,
}

impl ScannerGeometry {
    /// Builds a geometry with the default radial acceptance
    /// (`crystals_per_ring / 2 + 1` bins) and the ring radius implied by the
    /// transaxial pitch.
    pub fn new(num_rings: usize, crystals_per_ring: usize) -> Result<Self> {
        let pitch = 4.0;
        let geom = Self {
            num_rings,
            crystals_per_ring,
            crystal_transaxial_pitch_mm: pitch,
            crystal_axial_pitch_mm: 5.3,
            ring_radius_mm: crystals_per_ring as f64 * pitch / (2.0 * PI),
            radial_bins: crystals_per_ring / 2 + 1,
            angle_bins: crystals_per_ring / 2,
        };
        geom.validate()?;
        Ok(geom)
    }

    /// 15 rings of 128 crystals: the mock-up scanner used for desk-scale runs.
    pub fn mock() -> Self {
        Self::new(15, 128).expect("mock geometry is valid")
    }

    /// 45 rings of 448 crystals. Constructible for bookkeeping checks only.
    pub fn clinical() -> Self {
        Self::new(45, 448).expect("clinical geometry is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.crystals_per_ring;
        if self.num_rings == 0 {
            return Err(Error::Geometry("num_rings must be positive".into()));
        }
        if n < 4 || n % 2 != 0 {
            return Err(Error::Geometry(format!(
                "crystals_per_ring must be even and >= 4, got {n}"
            )));
        }
        if self.angle_bins != n / 2 {
            return Err(Error::Geometry(format!(
                "angle_bins must equal crystals_per_ring / 2 = {}, got {}",
                n / 2,
                self.angle_bins
            )));
        }
        if self.radial_bins % 2 == 0 || self.radial_bins > n - 1 {
            return Err(Error::Geometry(format!(
                "radial_bins must be odd and <= {}, got {}",
                n - 1,
                self.radial_bins
            )));
        }
        for (name, v) in [
            ("crystal_transaxial_pitch_mm", self.crystal_transaxial_pitch_mm),
            ("crystal_axial_pitch_mm", self.crystal_axial_pitch_mm),
            ("ring_radius_mm", self.ring_radius_mm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Geometry(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn num_crystals(&self) -> usize {
        self.num_rings * self.crystals_per_ring
    }

    pub fn bins_per_plane(&self) -> usize {
        self.radial_bins * self.angle_bins
    }

    /// Number of planes in the michelogram, `R^2 - (R - 1)`.
    pub fn num_planes(&self) -> usize {
        let r = self.num_rings;
        r * r - (r - 1)
    }

    pub fn center_radial_bin(&self) -> usize {
        (self.radial_bins - 1) / 2
    }

    /// Smallest accepted crystal index difference.
    fn min_difference(&self) -> usize {
        self.crystals_per_ring / 2 - self.center_radial_bin()
    }

    /// Transverse position of a crystal face centre in millimetres.
    pub fn crystal_position(&self, index: usize) -> [f64; 2] {
        let phi = 2.0 * PI * index as f64 / self.crystals_per_ring as f64;
        [self.ring_radius_mm * phi.cos(), self.ring_radius_mm * phi.sin()]
    }

    /// Radius of the transaxial field of view covered by the outermost
    /// accepted radial bin.
    pub fn fov_radius_mm(&self) -> f64 {
        let half = self.center_radial_bin() as f64;
        self.ring_radius_mm * (PI * half / self.crystals_per_ring as f64).sin()
    }

    /// Crystal indices `(a, b)` of the ordered pair owning a transaxial cell.
    pub fn bin_crystals(&self, radial_index: usize, angle_index: usize) -> (usize, usize) {
        let n = self.crystals_per_ring;
        let d = self.min_difference() + radial_index;
        let a = (angle_index + n - d / 2) % n;
        (a, (a + d) % n)
    }

    /// Transaxial cell of an unordered crystal pair, with a flag telling
    /// whether the pair had to be swapped to reach canonical order.
    pub fn transaxial_bin(&self, index_a: usize, index_b: usize) -> Option<(usize, usize, bool)> {
        let n = self.crystals_per_ring;
        if index_a == index_b {
            return None;
        }
        let d = (index_b + n - index_a) % n;
        let v = (index_a + d / 2) % n;
        let (d, v, swapped) = if v < n / 2 {
            (d, v, false)
        } else {
            (n - d, v - n / 2, true)
        };
        let lo = self.min_difference();
        if d < lo || d >= lo + self.radial_bins {
            return None;
        }
        Some((d - lo, v, swapped))
    }

    /// Central ray of a transaxial cell: the chord joining its two crystals.
    pub fn bin_ray(&self, radial_index: usize, angle_index: usize) -> ([f64; 2], [f64; 2]) {
        let (a, b) = self.bin_crystals(radial_index, angle_index);
        (self.crystal_position(a), self.crystal_position(b))
    }

    fn check_crystal(&self, c: Crystal) -> Result<()> {
        if c.ring >= self.num_rings || c.index >= self.crystals_per_ring {
            return Err(Error::CrystalOutOfRange {
                ring: c.ring,
                index: c.index,
                rings: self.num_rings,
                crystals: self.crystals_per_ring,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Crystal {
    pub ring: usize,
    pub index: usize,
}

impl Crystal {
    pub fn new(ring: usize, index: usize) -> Self {
        Self { ring, index }
    }
}

/// Line of response between two distinct crystals. Equality ignores
/// endpoint order.
#[derive(Debug, Clone, Copy)]
pub struct Lor {
    pub crystal_a: Crystal,
    pub crystal_b: Crystal,
}

impl Lor {
    pub fn new(crystal_a: Crystal, crystal_b: Crystal) -> Self {
        Self { crystal_a, crystal_b }
    }

    pub fn swapped(self) -> Self {
        Self::new(self.crystal_b, self.crystal_a)
    }

    fn key(&self) -> (Crystal, Crystal) {
        if self.crystal_a <= self.crystal_b {
            (self.crystal_a, self.crystal_b)
        } else {
            (self.crystal_b, self.crystal_a)
        }
    }
}

impl PartialEq for Lor {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Lor {}

impl std::hash::Hash for Lor {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.key().hash(state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlaneKind {
    Direct,
    SummedRd1,
    Oblique,
}

impl PlaneKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PlaneKind::Direct => "direct",
            PlaneKind::SummedRd1 => "summed_rd1",
            PlaneKind::Oblique => "oblique",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneDescriptor {
    pub plane_id: usize,
    pub kind: PlaneKind,
    /// Ordered `(ring of crystal a, ring of crystal b)` pairs, where `a` is
    /// the crystal in canonical transaxial order.
    pub ring_pairs: Vec<(usize, usize)>,
    pub ring_difference: isize,
}

impl PlaneDescriptor {
    /// Axial position in ring units (mean ring index of the contributing
    /// pairs).
    pub fn axial_position(&self) -> f64 {
        let (a, b) = self.ring_pairs[0];
        (a + b) as f64 / 2.0
    }
}

/// Michelogram bookkeeping for one geometry: the plane list plus a reverse
/// lookup from ordered ring pair to plane.
#[derive(Debug, Clone)]
pub struct PlaneTable {
    planes: Vec<PlaneDescriptor>,
    by_ring_pair: Vec<usize>,
    num_rings: usize,
}

impl PlaneTable {
    pub fn new(geom: &ScannerGeometry) -> Self {
        let planes = plane_table(geom);
        let r = geom.num_rings;
        let mut by_ring_pair = vec![usize::MAX; r * r];
        for p in &planes {
            for &(a, b) in &p.ring_pairs {
                by_ring_pair[a * r + b] = p.plane_id;
            }
        }
        debug_assert!(by_ring_pair.iter().all(|&p| p != usize::MAX));
        Self {
            planes,
            by_ring_pair,
            num_rings: r,
        }
    }

    pub fn planes(&self) -> &[PlaneDescriptor] {
        &self.planes
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    pub fn get(&self, plane_id: usize) -> Option<&PlaneDescriptor> {
        self.planes.get(plane_id)
    }

    pub fn plane_of(&self, ring_a: usize, ring_b: usize) -> usize {
        self.by_ring_pair[ring_a * self.num_rings + ring_b]
    }

    /// Index of the direct plane of `ring`.
    pub fn direct_plane(&self, ring: usize) -> usize {
        self.plane_of(ring, ring)
    }

    /// Maps a line of response to `(plane_id, radial_index, angle_index)`,
    /// or `None` outside the radial acceptance.
    pub fn lor_to_bin(&self, geom: &ScannerGeometry, lor: Lor) -> Result<Option<(usize, usize, usize)>> {
        geom.check_crystal(lor.crystal_a)?;
        geom.check_crystal(lor.crystal_b)?;
        let Some((radial, angle, swapped)) =
            geom.transaxial_bin(lor.crystal_a.index, lor.crystal_b.index)
        else {
            return Ok(None);
        };
        let (ra, rb) = if swapped {
            (lor.crystal_b.ring, lor.crystal_a.ring)
        } else {
            (lor.crystal_a.ring, lor.crystal_b.ring)
        };
        Ok(Some((self.plane_of(ra, rb), radial, angle)))
    }

    /// All lines of response summed into one sinogram bin.
    pub fn bin_to_lors(
        &self,
        geom: &ScannerGeometry,
        plane_id: usize,
        radial_index: usize,
        angle_index: usize,
    ) -> Result<Vec<Lor>> {
        let plane = self.planes.get(plane_id);
        if plane.is_none() || radial_index >= geom.radial_bins || angle_index >= geom.angle_bins {
            return Err(Error::BinOutOfRange {
                plane: plane_id,
                radial: radial_index,
                angle: angle_index,
            });
        }
        let (a, b) = geom.bin_crystals(radial_index, angle_index);
        Ok(plane
            .unwrap()
            .ring_pairs
            .iter()
            .map(|&(ra, rb)| Lor::new(Crystal::new(ra, a), Crystal::new(rb, b)))
            .collect())
    }
}

/// Ordered plane list: direct planes by ring, summed ring-difference-1
/// planes by lower ring, then oblique planes by |rd| ascending, positive
/// difference before negative, lower ring ascending.
pub fn plane_table(geom: &ScannerGeometry) -> Vec<PlaneDescriptor> {
    let r = geom.num_rings;
    let mut planes = Vec::with_capacity(geom.num_planes());
    let mut push = |kind, ring_pairs: Vec<(usize, usize)>, rd: isize| {
        let plane_id = planes.len();
        planes.push(PlaneDescriptor {
            plane_id,
            kind,
            ring_pairs,
            ring_difference: rd,
        });
    };
    for ring in 0..r {
        push(PlaneKind::Direct, vec![(ring, ring)], 0);
    }
    for ring in 0..r.saturating_sub(1) {
        push(PlaneKind::SummedRd1, vec![(ring, ring + 1), (ring + 1, ring)], 1);
    }
    for k in 2..r {
        for sign in [1isize, -1] {
            for lo in 0..r - k {
                let pair = if sign > 0 { (lo, lo + k) } else { (lo + k, lo) };
                push(PlaneKind::Oblique, vec![pair], sign * k as isize);
            }
        }
    }
    planes
}
