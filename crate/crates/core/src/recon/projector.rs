use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::ScannerGeometry;
use crate::phantom::ImageGrid;

/// Sparse system matrix (rows: sinogram bins `r * angle_bins + v`,
/// columns: pixels `iy * size + ix`). Each row samples the bin's central
/// ray once per pixel column (or row, for steep rays) with linear
/// interpolation between the two nearest pixel centres.
#[derive(Debug, Clone)]
pub struct SystemMatrix {
    pub grid: ImageGrid,
    pub radial_bins: usize,
    pub angle_bins: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

fn joseph_row(p0: [f64; 2], p1: [f64; 2], grid: ImageGrid, out: &mut Vec<(u32, f64)>) {
    let n = grid.size;
    let half = n as f64 / 2.0;
    let (dx, dy) = (p1[0] - p0[0], p1[1] - p0[1]);
    let len = (dx * dx + dy * dy).sqrt();
    // drive along the axis the ray is most aligned with
    let (major_is_x, dmaj, dmin, p_maj, p_min) = if dx.abs() >= dy.abs() {
        (true, dx, dy, p0[0], p0[1])
    } else {
        (false, dy, dx, p0[1], p0[0])
    };
    let step = grid.pixel_mm * len / dmaj.abs();
    for i in 0..n {
        let u = (i as f64 + 0.5 - half) * grid.pixel_mm;
        let t = (u - p_maj) / dmaj;
        if !(0.0..=1.0).contains(&t) {
            continue;
        }
        let m = (p_min + t * dmin) / grid.pixel_mm + half - 0.5;
        let j0 = m.floor();
        let frac = m - j0;
        for (j, w) in [(j0 as i64, 1.0 - frac), (j0 as i64 + 1, frac)] {
            if j < 0 || j >= n as i64 || w <= 0.0 {
                continue;
            }
            let j = j as usize;
            let (iy, ix) = if major_is_x { (j, i) } else { (i, j) };
            out.push(((iy * n + ix) as u32, w * step));
        }
    }
}

impl SystemMatrix {
    pub fn new(geom: &ScannerGeometry, grid: ImageGrid) -> Self {
        let mut indptr = Vec::with_capacity(geom.bins_per_plane() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut row = Vec::new();
        indptr.push(0);
        for r in 0..geom.radial_bins {
            for v in 0..geom.angle_bins {
                let (p0, p1) = geom.bin_ray(r, v);
                row.clear();
                joseph_row(p0, p1, grid, &mut row);
                for &(c, w) in &row {
                    indices.push(c);
                    values.push(w);
                }
                indptr.push(indices.len());
            }
        }
        Self {
            grid,
            radial_bins: geom.radial_bins,
            angle_bins: geom.angle_bins,
            indptr,
            indices,
            values,
        }
    }

    pub fn sinogram_dim(&self) -> (usize, usize) {
        (self.radial_bins, self.angle_bins)
    }

    pub fn image_dim(&self) -> (usize, usize) {
        (self.grid.size, self.grid.size)
    }

    fn check(&self, what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
        if got != want {
            return Err(Error::Shape(format!("{what} is {got:?}, expected {want:?}")));
        }
        Ok(())
    }

    fn row(&self, bin: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[bin]..self.indptr[bin + 1];
        self.indices[span.clone()]
            .iter()
            .zip(&self.values[span])
            .map(|(&c, &w)| (c as usize, w))
    }

    /// Forward projection restricted to bins whose angle index satisfies
    /// `keep`.
    pub fn project_subset(&self, image: &Array2<f64>, keep: impl Fn(usize) -> bool) -> Result<Array2<f64>> {
        self.check("image", image.dim(), self.image_dim())?;
        let flat = image.as_slice().expect("standard layout");
        Ok(Array2::from_shape_fn(self.sinogram_dim(), |(r, v)| {
            if !keep(v) {
                return 0.0;
            }
            self.row(r * self.angle_bins + v).map(|(c, w)| w * flat[c]).sum()
        }))
    }

    pub fn project(&self, image: &Array2<f64>) -> Result<Array2<f64>> {
        self.project_subset(image, |_| true)
    }

    pub fn backproject_subset(&self, sino: &Array2<f64>, keep: impl Fn(usize) -> bool) -> Result<Array2<f64>> {
        self.check("sinogram", sino.dim(), self.sinogram_dim())?;
        let n = self.grid.size;
        let mut img = vec![0.0; n * n];
        for ((r, v), &y) in sino.indexed_iter() {
            if y == 0.0 || !keep(v) {
                continue;
            }
            for (c, w) in self.row(r * self.angle_bins + v) {
                img[c] += w * y;
            }
        }
        Ok(Array2::from_shape_vec((n, n), img).expect("n x n"))
    }

    pub fn backproject(&self, sino: &Array2<f64>) -> Result<Array2<f64>> {
        self.backproject_subset(sino, |_| true)
    }
}
