//! Synthetic pelvis-like activity phantoms and their sinograms.
//!
//! A phantom slice is a body ellipse with lesion ellipses painted over it:
//! the activity at a point is that of the last ellipse containing it.
//! Lesions never overlap each other and sit inside the body, so the painted
//! image equals the body plus one signed density step per lesion, which is
//! what the analytic projector integrates.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::geometry::{PlaneKind, PlaneTable, ScannerGeometry};
use crate::rng::stream_rng;
use crate::sparsity::PlaneMaskSet;
use crate::stack::{Plane, SinogramStack};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EllipseLabel {
    Background,
    BladderHot,
    Cold,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    pub rotation: f64,
    pub activity: f64,
    pub label: EllipseLabel,
}

impl Ellipse {
    fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation.sin_cos();
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.level(p) <= 1.0
    }

    /// `(x/a)^2 + (y/b)^2` in the ellipse frame; <= 1 inside.
    pub fn level(&self, p: [f64; 2]) -> f64 {
        let q = self.to_local(p);
        (q[0] / self.semi_axes[0]).powi(2) + (q[1] / self.semi_axes[1]).powi(2)
    }

    /// Largest distance from the origin of any point of the ellipse (upper
    /// bound, tight for axis-aligned centred ellipses).
    pub fn outer_radius(&self) -> f64 {
        self.center[0].hypot(self.center[1]) + self.semi_axes[0].max(self.semi_axes[1])
    }

    /// Length of the intersection of the line through `p` and `q` with the
    /// ellipse.
    pub fn chord(&self, p: [f64; 2], q: [f64; 2]) -> f64 {
        let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
        let len = dx.hypot(dy);
        let (s, c) = self.rotation.sin_cos();
        // direction and origin in the ellipse frame, scaled to the unit circle
        let (ux, uy) = (dx / len, dy / len);
        let w = [(c * ux + s * uy) / self.semi_axes[0], (-s * ux + c * uy) / self.semi_axes[1]];
        let o = self.to_local(p);
        let o = [o[0] / self.semi_axes[0], o[1] / self.semi_axes[1]];
        let alpha = w[0] * w[0] + w[1] * w[1];
        let beta = 2.0 * (o[0] * w[0] + o[1] * w[1]);
        let gamma = o[0] * o[0] + o[1] * o[1] - 1.0;
        let disc = beta * beta - 4.0 * alpha * gamma;
        if disc <= 0.0 {
            0.0
        } else {
            disc.sqrt() / alpha
        }
    }

    /// Point on the boundary at parameter angle `t`.
    pub fn boundary_point(&self, t: f64) -> [f64; 2] {
        let (s, c) = self.rotation.sin_cos();
        let (x, y) = (self.semi_axes[0] * t.cos(), self.semi_axes[1] * t.sin());
        [self.center[0] + c * x - s * y, self.center[1] + s * x + c * y]
    }

    pub fn area(&self) -> f64 {
        PI * self.semi_axes[0] * self.semi_axes[1]
    }
}

/// An ellipse contributing a signed density to a line integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityComponent {
    pub shape: Ellipse,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhantomSlice {
    /// Body first, then non-overlapping lesions inside it.
    pub ellipses: Vec<Ellipse>,
}

impl PhantomSlice {
    pub fn body(&self) -> Option<&Ellipse> {
        self.ellipses.first()
    }

    pub fn bladder(&self) -> Option<&Ellipse> {
        self.ellipses.iter().find(|e| e.label == EllipseLabel::BladderHot)
    }

    pub fn activity_at(&self, p: [f64; 2]) -> f64 {
        self.ellipses
            .iter()
            .rev()
            .find(|e| e.contains(p))
            .map_or(0.0, |e| e.activity)
    }

    /// Additive decomposition of the painted slice.
    pub fn components(&self) -> Vec<DensityComponent> {
        let Some(body) = self.body() else {
            return Vec::new();
        };
        let mut out = vec![DensityComponent {
            shape: *body,
            density: body.activity,
        }];
        out.extend(self.ellipses[1..].iter().map(|e| DensityComponent {
            shape: *e,
            density: e.activity - body.activity,
        }));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub slices: Vec<PhantomSlice>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub slices: usize,
    pub fov_radius_mm: f64,
    pub hot_lesion: bool,
    pub cold_lesions: (usize, usize),
    /// Bladder to background activity ratio range.
    pub hot_ratio: (f64, f64),
    /// Every slice identical (no axial variation).
    pub axially_uniform: bool,
}

impl PhantomSpec {
    pub fn for_geometry(geom: &ScannerGeometry) -> Self {
        Self {
            slices: geom.num_rings,
            fov_radius_mm: geom.fov_radius_mm(),
            hot_lesion: true,
            cold_lesions: (1, 3),
            hot_ratio: (4.0, 10.0),
            axially_uniform: false,
        }
    }

    pub fn body_only(mut self) -> Self {
        self.hot_lesion = false;
        self.cold_lesions = (0, 0);
        self
    }
}

/// Axial support of a lesion: the slice range and a profile scaling its
/// semi-axes like an ellipsoid cross-section.
struct AxialExtent {
    center: f64,
    half_length: f64,
}

impl AxialExtent {
    fn scale(&self, z: f64, uniform: bool) -> Option<f64> {
        if uniform {
            return Some(1.0);
        }
        let t = (z - self.center) / self.half_length;
        (t.abs() < 1.0).then(|| (1.0 - t * t).sqrt().max(0.35))
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn inside_scaled(outer: &Ellipse, inner: &Ellipse, margin: f64) -> bool {
    (0..48).all(|k| outer.level(inner.boundary_point(2.0 * PI * k as f64 / 48.0)) <= margin * margin)
}

fn disjoint(a: &Ellipse, b: &Ellipse, gap: f64) -> bool {
    let d = (a.center[0] - b.center[0]).hypot(a.center[1] - b.center[1]);
    d > a.semi_axes[0].max(a.semi_axes[1]) + b.semi_axes[0].max(b.semi_axes[1]) + gap
}

/// Deterministic random phantom: one body, optionally one hot bladder
/// (4-10x background), and a number of cold lesions.
pub fn make_phantom(seed: u64, spec: &PhantomSpec) -> Phantom {
    let mut rng = stream_rng(seed, 0);
    let fov = spec.fov_radius_mm;
    let body = loop {
        let e = Ellipse {
            center: [uniform(&mut rng, -0.06, 0.06) * fov, uniform(&mut rng, -0.06, 0.06) * fov],
            semi_axes: [uniform(&mut rng, 0.65, 0.82) * fov, uniform(&mut rng, 0.45, 0.62) * fov],
            rotation: uniform(&mut rng, -0.25, 0.25),
            activity: 1.0,
            label: EllipseLabel::Background,
        };
        if e.outer_radius() <= 0.95 * fov {
            break e;
        }
    };
    let minor = body.semi_axes[1];
    let n_slices = spec.slices as f64;

    // in-plane placement is fixed per lesion; the axial profile only scales
    // its semi-axes, so lesions that are disjoint in one slice stay disjoint
    let mut lesions: Vec<(Ellipse, AxialExtent)> = Vec::new();
    if spec.hot_lesion {
        for _ in 0..1000 {
            let e = Ellipse {
                center: [
                    body.center[0] + uniform(&mut rng, -0.3, 0.3) * body.semi_axes[0],
                    body.center[1] + uniform(&mut rng, -0.3, 0.3) * body.semi_axes[1],
                ],
                semi_axes: [uniform(&mut rng, 0.25, 0.4) * minor, uniform(&mut rng, 0.2, 0.32) * minor],
                rotation: uniform(&mut rng, 0.0, PI),
                activity: uniform(&mut rng, spec.hot_ratio.0, spec.hot_ratio.1) * body.activity,
                label: EllipseLabel::BladderHot,
            };
            if inside_scaled(&body, &e, 0.85) {
                let extent = AxialExtent {
                    center: uniform(&mut rng, 0.3, 0.7) * n_slices,
                    half_length: uniform(&mut rng, 0.3, 0.5) * n_slices,
                };
                lesions.push((e, extent));
                break;
            }
        }
    }
    let (lo, hi) = spec.cold_lesions;
    let n_cold = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let mut attempts = 0;
    while lesions.iter().filter(|(e, _)| e.label == EllipseLabel::Cold).count() < n_cold && attempts < 5000 {
        attempts += 1;
        let e = Ellipse {
            center: [
                body.center[0] + uniform(&mut rng, -0.7, 0.7) * body.semi_axes[0],
                body.center[1] + uniform(&mut rng, -0.7, 0.7) * body.semi_axes[1],
            ],
            semi_axes: [uniform(&mut rng, 0.1, 0.2) * minor, uniform(&mut rng, 0.08, 0.16) * minor],
            rotation: uniform(&mut rng, 0.0, PI),
            activity: uniform(&mut rng, 0.0, 0.3) * body.activity,
            label: EllipseLabel::Cold,
        };
        if inside_scaled(&body, &e, 0.9) && lesions.iter().all(|(o, _)| disjoint(o, &e, 1.0)) {
            let extent = AxialExtent {
                center: uniform(&mut rng, 0.0, 1.0) * n_slices,
                half_length: uniform(&mut rng, 0.2, 0.5) * n_slices,
            };
            lesions.push((e, extent));
        }
    }

    let slices = (0..spec.slices)
        .map(|z| {
            let mut ellipses = vec![body];
            for (e, extent) in &lesions {
                if let Some(s) = extent.scale(z as f64 + 0.5, spec.axially_uniform) {
                    let mut e = *e;
                    e.semi_axes = [e.semi_axes[0] * s, e.semi_axes[1] * s];
                    ellipses.push(e);
                }
            }
            PhantomSlice { ellipses }
        })
        .collect();
    Phantom { slices }
}

/// Analytic line integrals of a set of density components along every bin's
/// central ray.
pub fn project_components(components: &[DensityComponent], geom: &ScannerGeometry) -> Array2<f64> {
    Array2::from_shape_fn((geom.radial_bins, geom.angle_bins), |(r, v)| {
        let (p, q) = geom.bin_ray(r, v);
        components.iter().map(|c| c.density * c.shape.chord(p, q)).sum()
    })
}

/// Noiseless sinogram of one phantom slice.
pub fn forward_project(slice: &PhantomSlice, geom: &ScannerGeometry) -> Array2<f64> {
    project_components(&slice.components(), geom)
}

/// Axial slice feeding a plane: the ring itself for direct planes, the
/// nearest slice to the ring-pair midpoint otherwise.
fn source_slices(kind: PlaneKind, ring_pairs: &[(usize, usize)]) -> Vec<usize> {
    let (a, b) = ring_pairs[0];
    match kind {
        PlaneKind::Direct => vec![a],
        PlaneKind::SummedRd1 => vec![a.min(b), a.max(b)],
        PlaneKind::Oblique => vec![(a + b) / 2],
    }
}

/// Noiseless expected-count stack (line integrals times `counts_scale`) and
/// a Poisson draw of it. Summed ring-difference-1 planes add the two
/// adjacent slices, i.e. twice their mean.
pub fn build_stack(
    phantom: &Phantom,
    geom: &ScannerGeometry,
    counts_scale: f64,
    seed: u64,
) -> Result<(SinogramStack, SinogramStack)> {
    if !(counts_scale > 0.0 && counts_scale.is_finite()) {
        return Err(Error::Config(format!("counts_scale must be positive, got {counts_scale}")));
    }
    if phantom.slices.len() != geom.num_rings {
        return Err(Error::Shape(format!(
            "phantom has {} slices, geometry has {} rings",
            phantom.slices.len(),
            geom.num_rings
        )));
    }
    let projections: Vec<Array2<f64>> = phantom.slices.iter().map(|s| forward_project(s, geom)).collect();
    let table = PlaneTable::new(geom);
    let mut noiseless = Vec::with_capacity(table.len());
    let mut counts = Vec::with_capacity(table.len());
    for plane in table.planes() {
        let mut lambda = Array2::<f64>::zeros((geom.radial_bins, geom.angle_bins));
        for s in source_slices(plane.kind, &plane.ring_pairs) {
            lambda += &projections[s];
        }
        lambda *= counts_scale;
        let drawn = draw_counts(&lambda, seed, plane.plane_id);
        noiseless.push(lambda.mapv(|l| l as f32));
        counts.push(drawn);
    }
    Ok((SinogramStack::new(noiseless, false), SinogramStack::new(counts, true)))
}

/// Poisson draw of one plane from its own stream of `seed`.
pub fn draw_counts(lambda: &Array2<f64>, seed: u64, plane_id: usize) -> Plane {
    let mut rng = stream_rng(seed, plane_id as u64);
    lambda.mapv(|l| {
        if l > 0.0 {
            Poisson::new(l).expect("positive rate").sample(&mut rng) as f32
        } else {
            0.0
        }
    })
}

/// Mean line integral over the bins a mask set marks as affected. Dividing
/// a target count level by this gives the `counts_scale` that puts the
/// affected-bin mean at that level.
pub fn mean_affected_line_integral(phantoms: &[Phantom], geom: &ScannerGeometry, masks: &PlaneMaskSet) -> f64 {
    let table = PlaneTable::new(geom);
    let (mut sum, mut n) = (0.0, 0usize);
    for phantom in phantoms {
        let projections: Vec<Array2<f64>> = phantom.slices.iter().map(|s| forward_project(s, geom)).collect();
        for plane in table.planes() {
            let w = &masks.weights[plane.plane_id];
            for s in source_slices(plane.kind, &plane.ring_pairs) {
                for (v, &wt) in projections[s].iter().zip(w.iter()) {
                    if wt < 1.0 {
                        sum += v;
                    }
                }
            }
            n += w.iter().filter(|&&x| x < 1.0).count();
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Square image grid centred on the scanner axis; pixel `[[iy, ix]]` has
/// its centre at `((ix + 0.5 - n/2) * size, (iy + 0.5 - n/2) * size)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageGrid {
    pub size: usize,
    pub pixel_mm: f64,
}

impl ImageGrid {
    pub fn center(&self, iy: usize, ix: usize) -> [f64; 2] {
        let half = self.size as f64 / 2.0;
        [
            (ix as f64 + 0.5 - half) * self.pixel_mm,
            (iy as f64 + 0.5 - half) * self.pixel_mm,
        ]
    }
}

/// Pixel-averaged activity with `supersample^2` samples per pixel.
pub fn rasterize(slice: &PhantomSlice, grid: ImageGrid, supersample: usize) -> Array2<f64> {
    let s = supersample.max(1);
    let step = grid.pixel_mm / s as f64;
    Array2::from_shape_fn((grid.size, grid.size), |(iy, ix)| {
        let c = grid.center(iy, ix);
        let mut acc = 0.0;
        for sy in 0..s {
            for sx in 0..s {
                let p = [
                    c[0] - grid.pixel_mm / 2.0 + (sx as f64 + 0.5) * step,
                    c[1] - grid.pixel_mm / 2.0 + (sy as f64 + 0.5) * step,
                ];
                acc += slice.activity_at(p);
            }
        }
        acc / (s * s) as f64
    })
}

/// Pixels whose centres lie inside the hot ellipse shrunk by `erosion`.
pub fn bladder_roi(slice: &PhantomSlice, grid: ImageGrid, erosion: f64) -> Option<Array2<bool>> {
    let mut e = *slice.bladder()?;
    e.semi_axes = [e.semi_axes[0] * erosion, e.semi_axes[1] * erosion];
    let roi = Array2::from_shape_fn((grid.size, grid.size), |(iy, ix)| e.contains(grid.center(iy, ix)));
    roi.iter().any(|&x| x).then_some(roi)
}

/// Disc of `area_px` pixels placed at random inside the body, clear of
/// every lesion by `margin_mm`.
pub fn background_roi(slice: &PhantomSlice, grid: ImageGrid, area_px: usize, margin_mm: f64, seed: u64) -> Option<Array2<bool>> {
    let body = slice.body()?;
    let radius = (area_px.max(1) as f64 / PI).sqrt() * grid.pixel_mm;
    let mut rng = stream_rng(seed, 0);
    for _ in 0..2000 {
        let c = [
            body.center[0] + uniform(&mut rng, -1.0, 1.0) * body.semi_axes[0],
            body.center[1] + uniform(&mut rng, -1.0, 1.0) * body.semi_axes[1],
        ];
        let disc = Ellipse {
            center: c,
            semi_axes: [radius, radius],
            rotation: 0.0,
            activity: 0.0,
            label: EllipseLabel::Background,
        };
        let clear = slice.ellipses[1..].iter().all(|l| {
            let mut grown = *l;
            grown.semi_axes = [l.semi_axes[0] + margin_mm + radius, l.semi_axes[1] + margin_mm + radius];
            !grown.contains(c)
        });
        if clear && inside_scaled(body, &disc, 0.9) {
            let roi = Array2::from_shape_fn((grid.size, grid.size), |(iy, ix)| disc.contains(grid.center(iy, ix)));
            if roi.iter().any(|&x| x) {
                return Some(roi);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use approx::assert_relative_eq;

    fn disk(center: [f64; 2], r: f64, activity: f64) -> Ellipse {
        Ellipse {
            center,
            semi_axes: [r, r],
            rotation: 0.0,
            activity,
            label: EllipseLabel::Background,
        }
    }

    /// Chord by marching along the line and bisecting each inside/outside
    /// transition.
    fn marched_chord(e: &Ellipse, p: [f64; 2], q: [f64; 2]) -> f64 {
        let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
        let len = dx.hypot(dy);
        let at = |t: f64| [p[0] + dx * t / len, p[1] + dy * t / len];
        let inside = |t: f64| e.level(at(t)) <= 1.0;
        let (t0, t1, steps) = (-len, 2.0 * len, 30_000);
        let h = (t1 - t0) / steps as f64;
        let mut crossings = Vec::new();
        for k in 0..steps {
            let (a, b) = (t0 + k as f64 * h, t0 + (k + 1) as f64 * h);
            if inside(a) != inside(b) {
                let (mut lo, mut hi) = (a, b);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if inside(mid) == inside(lo) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                crossings.push(0.5 * (lo + hi));
            }
        }
        match crossings.len() {
            0 => 0.0,
            2 => crossings[1] - crossings[0],
            n => panic!("{n} crossings"),
        }
    }

    #[test]
    fn chord_matches_marching_oracle() {
        let g = ScannerGeometry::mock();
        let mut rng = stream_rng(42, 0);
        let e = Ellipse {
            center: [12.0, -7.5],
            semi_axes: [21.0, 9.0],
            rotation: 0.6,
            activity: 1.0,
            label: EllipseLabel::Background,
        };
        let mut nonzero = 0;
        for _ in 0..100 {
            let r = rng.random_range(0..g.radial_bins);
            let v = rng.random_range(0..g.angle_bins);
            let (p, q) = g.bin_ray(r, v);
            let exact = e.chord(p, q);
            let marched = marched_chord(&e, p, q);
            if exact > 0.0 {
                nonzero += 1;
                assert!((exact - marched).abs() <= 1e-6 * exact, "{exact} vs {marched}");
            } else {
                assert!(marched < 1e-9);
            }
        }
        assert!(nonzero > 10);
    }

    #[test]
    fn centered_disk_projection_is_angle_invariant() {
        let g = ScannerGeometry::mock();
        let slice = PhantomSlice {
            ellipses: vec![disk([0.0, 0.0], 30.0, 1.0)],
        };
        let s = forward_project(&slice, &g);
        for r in 0..g.radial_bins {
            for v in 1..g.angle_bins {
                assert_relative_eq!(s[[r, v]], s[[r, 0]], max_relative = 1e-9, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn zero_phantom_projects_to_zero() {
        let g = ScannerGeometry::mock();
        let slice = PhantomSlice {
            ellipses: vec![disk([3.0, 1.0], 30.0, 0.0)],
        };
        assert!(forward_project(&slice, &g).iter().all(|&v| v == 0.0));
        assert!(forward_project(&PhantomSlice::default(), &g).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_is_linear() {
        let g = ScannerGeometry::mock();
        let spec = PhantomSpec::for_geometry(&g);
        let p1 = make_phantom(1, &spec).slices[7].components();
        let p2 = make_phantom(2, &spec).slices[7].components();
        let (a, b) = (0.7, -1.9);
        let combined: Vec<DensityComponent> = p1
            .iter()
            .map(|c| DensityComponent { density: a * c.density, ..*c })
            .chain(p2.iter().map(|c| DensityComponent { density: b * c.density, ..*c }))
            .collect();
        let lhs = project_components(&combined, &g);
        let rhs = project_components(&p1, &g) * a + project_components(&p2, &g) * b;
        for (x, y) in lhs.iter().zip(rhs.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn total_projection_invariant_under_rotation_by_one_view() {
        let g = ScannerGeometry::mock();
        let slice = make_phantom(9, &PhantomSpec::for_geometry(&g)).slices[6].clone();
        let step = PI / g.angle_bins as f64;
        let rotated = PhantomSlice {
            ellipses: slice
                .ellipses
                .iter()
                .map(|e| {
                    let (s, c) = step.sin_cos();
                    Ellipse {
                        center: [c * e.center[0] - s * e.center[1], s * e.center[0] + c * e.center[1]],
                        rotation: e.rotation + step,
                        ..*e
                    }
                })
                .collect(),
        };
        let a: f64 = forward_project(&slice, &g).sum();
        let b: f64 = forward_project(&rotated, &g).sum();
        assert_relative_eq!(a, b, max_relative = 1e-6);
    }

    #[test]
    fn phantoms_are_deterministic() {
        let spec = PhantomSpec::for_geometry(&ScannerGeometry::mock());
        assert_eq!(make_phantom(5, &spec), make_phantom(5, &spec));
        assert_ne!(make_phantom(5, &spec), make_phantom(6, &spec));
    }

    #[test]
    fn lesion_free_spec_gives_uniform_body() {
        let spec = PhantomSpec::for_geometry(&ScannerGeometry::mock()).body_only();
        let p = make_phantom(3, &spec);
        for s in &p.slices {
            assert_eq!(s.ellipses.len(), 1);
            assert_eq!(s.ellipses[0].activity, 1.0);
        }
    }

    #[test]
    fn phantom_contents() {
        let spec = PhantomSpec::for_geometry(&ScannerGeometry::mock());
        for seed in 0..50 {
            let p = make_phantom(seed, &spec);
            assert_eq!(p.slices.len(), 15);
            let hot: Vec<_> = p.slices.iter().filter_map(|s| s.bladder()).collect();
            assert!(!hot.is_empty());
            for h in hot {
                let ratio = h.activity / p.slices[0].ellipses[0].activity;
                assert!((4.0..=10.0).contains(&ratio));
            }
            assert!(p
                .slices
                .iter()
                .any(|s| s.ellipses.iter().any(|e| e.label == EllipseLabel::Cold)));
        }
    }

    #[test]
    fn random_phantoms_stay_in_fov() {
        let spec = PhantomSpec::for_geometry(&ScannerGeometry::mock());
        let spec = PhantomSpec { slices: 3, ..spec };
        for seed in 0..10_000 {
            let p = make_phantom(seed, &spec);
            for s in &p.slices {
                for e in &s.ellipses {
                    assert!(e.outer_radius() <= spec.fov_radius_mm);
                    assert!(e.activity >= 0.0);
                }
            }
        }
    }

    #[test]
    fn summed_planes_double_uniform_direct_planes() {
        let g = ScannerGeometry::mock();
        let spec = PhantomSpec {
            axially_uniform: true,
            ..PhantomSpec::for_geometry(&g)
        };
        let p = make_phantom(4, &spec);
        let (noiseless, counts) = build_stack(&p, &g, 0.1, 1).unwrap();
        assert!(counts.counts_are_integer);
        let table = PlaneTable::new(&g);
        for plane in table.planes().iter().filter(|p| p.kind == PlaneKind::SummedRd1) {
            let (a, _) = plane.ring_pairs[0];
            let direct = &noiseless.planes[table.direct_plane(a)];
            for (s, d) in noiseless.planes[plane.plane_id].iter().zip(direct.iter()) {
                assert_eq!(*s, 2.0 * d);
            }
        }
    }

    #[test]
    fn poisson_counts_are_unbiased() {
        let g = ScannerGeometry::mock();
        let p = make_phantom(8, &PhantomSpec::for_geometry(&g));
        let (noiseless, counts) = build_stack(&p, &g, 0.05, 0).unwrap();
        let (plane, r, v) = (0, g.center_radial_bin(), 10);
        let lambda_plane = noiseless.planes[plane].mapv(|x| x as f64);
        assert_eq!(draw_counts(&lambda_plane, 0, plane), counts.planes[plane]);
        let lambda = lambda_plane[[r, v]];
        assert!(lambda > 0.5);
        let draws = 1000;
        let mean = (0..draws)
            .map(|seed| draw_counts(&lambda_plane, seed, plane)[[r, v]] as f64)
            .sum::<f64>()
            / draws as f64;
        let se = (lambda / draws as f64).sqrt();
        assert!((mean - lambda).abs() < 3.0 * se, "{mean} vs {lambda}");
    }

    #[test]
    fn build_stack_rejects_bad_inputs() {
        let g = ScannerGeometry::mock();
        let p = make_phantom(8, &PhantomSpec::for_geometry(&g));
        assert!(build_stack(&p, &g, 0.0, 0).is_err());
        let short = Phantom {
            slices: p.slices[..3].to_vec(),
        };
        assert!(build_stack(&short, &g, 1.0, 0).is_err());
    }

    #[test]
    fn rois_are_inside_their_regions() {
        let g = ScannerGeometry::mock();
        let p = make_phantom(2, &PhantomSpec {
            axially_uniform: true,
            ..PhantomSpec::for_geometry(&g)
        });
        let grid = ImageGrid { size: 96, pixel_mm: 1.25 };
        let slice = &p.slices[0];
        let bladder = bladder_roi(slice, grid, 0.7).unwrap();
        let n = bladder.iter().filter(|&&x| x).count();
        let bg = background_roi(slice, grid, n, 2.0, 7).unwrap();
        for iy in 0..96 {
            for ix in 0..96 {
                let c = grid.center(iy, ix);
                if bladder[[iy, ix]] {
                    assert!(slice.bladder().unwrap().contains(c));
                }
                if bg[[iy, ix]] {
                    assert_eq!(slice.activity_at(c), 1.0);
                }
            }
        }
    }
}
