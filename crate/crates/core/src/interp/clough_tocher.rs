//! Clough-Tocher C1 piecewise-cubic interpolation on a Delaunay
//! triangulation. Each triangle is split at its centroid into three cubic
//! Bezier patches; cross-boundary derivatives use the affine-invariant
//! direction towards the neighbouring triangle's centroid.

use crate::error::{Error, Result};

use super::delaunay::{delaunay_triangulate, Location, Triangulation};

#[derive(Debug, Clone)]
pub struct CloughTocher {
    tri: Triangulation,
    values: Vec<f64>,
    gradients: Vec<[f64; 2]>,
}

/// Vertex gradients from a least-squares plane through each vertex and its
/// edge neighbours, weighted by inverse squared distance.
pub fn estimate_gradients(tri: &Triangulation, values: &[f64]) -> Vec<[f64; 2]> {
    let rings = tri.vertex_neighbors();
    let mut out = vec![[0.0; 2]; tri.points.len()];
    for (i, ring) in rings.iter().enumerate() {
        let p = tri.points[i];
        let (mut sxx, mut sxy, mut syy, mut sxf, mut syf) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &j in ring {
            let (dx, dy) = (tri.points[j][0] - p[0], tri.points[j][1] - p[1]);
            let w = 1.0 / (dx * dx + dy * dy);
            let df = values[j] - values[i];
            sxx += w * dx * dx;
            sxy += w * dx * dy;
            syy += w * dy * dy;
            sxf += w * dx * df;
            syf += w * dy * df;
        }
        let det = sxx * syy - sxy * sxy;
        // every vertex of a valid triangulation has two independent edges
        if det.abs() > 1e-14 * (sxx * syy).max(f64::MIN_POSITIVE) {
            out[i] = [(syy * sxf - sxy * syf) / det, (sxx * syf - sxy * sxf) / det];
        }
    }
    out
}

impl CloughTocher {
    pub fn new(points: &[[f64; 2]], values: &[f64]) -> Result<Self> {
        if points.len() != values.len() {
            return Err(Error::Shape(format!("{} points with {} values", points.len(), values.len())));
        }
        let tri = delaunay_triangulate(points)?;
        let gradients = estimate_gradients(&tri, values);
        Ok(Self {
            tri,
            values: values.to_vec(),
            gradients,
        })
    }

    pub fn triangulation(&self) -> &Triangulation {
        &self.tri
    }

    /// Interpolated value at `p`; outside the hull, the value at the closest
    /// hull point.
    pub fn eval(&self, p: [f64; 2]) -> f64 {
        self.eval_from(p, 0).0
    }

    /// Evaluates all queries, walking from the previous hit.
    pub fn eval_many(&self, queries: &[[f64; 2]]) -> Vec<f64> {
        let mut start = 0;
        queries
            .iter()
            .map(|&q| {
                let (v, t) = self.eval_from(q, start);
                start = t;
                v
            })
            .collect()
    }

    fn eval_from(&self, p: [f64; 2], start: usize) -> (f64, usize) {
        match self.tri.locate(p, start) {
            Location::Inside(t, b) => (self.eval_in(t, b), t),
            Location::Outside => {
                let (t, q) = self.tri.nearest_hull_point(p);
                let b = self.tri.barycentric(t, q).map(|v| v.max(0.0));
                let s = b[0] + b[1] + b[2];
                (self.eval_in(t, b.map(|v| v / s)), t)
            }
        }
    }

    fn eval_in(&self, t: usize, b: [f64; 3]) -> f64 {
        let v = self.tri.triangles[t];
        let x = v.map(|i| self.tri.points[i]);
        let f = v.map(|i| self.values[i]);
        let df = v.map(|i| self.gradients[i]);

        let e12 = [x[1][0] - x[0][0], x[1][1] - x[0][1]];
        let e23 = [x[2][0] - x[1][0], x[2][1] - x[1][1]];
        let e31 = [x[0][0] - x[2][0], x[0][1] - x[2][1]];
        let dot = |g: [f64; 2], e: [f64; 2]| g[0] * e[0] + g[1] * e[1];

        let df12 = dot(df[0], e12);
        let df21 = -dot(df[1], e12);
        let df23 = dot(df[1], e23);
        let df32 = -dot(df[2], e23);
        let df31 = dot(df[2], e31);
        let df13 = -dot(df[0], e31);

        let c3000 = f[0];
        let c2100 = (df12 + 3.0 * c3000) / 3.0;
        let c2010 = (df13 + 3.0 * c3000) / 3.0;
        let c0300 = f[1];
        let c1200 = (df21 + 3.0 * c0300) / 3.0;
        let c0210 = (df23 + 3.0 * c0300) / 3.0;
        let c0030 = f[2];
        let c1020 = (df31 + 3.0 * c0030) / 3.0;
        let c0120 = (df32 + 3.0 * c0030) / 3.0;

        let c2001 = (c2100 + c2010 + c3000) / 3.0;
        let c0201 = (c1200 + c0300 + c0210) / 3.0;
        let c0021 = (c1020 + c0120 + c0030) / 3.0;

        let mut g = [-0.5; 3];
        for (k, gk) in g.iter_mut().enumerate() {
            let Some(u) = self.tri.neighbors[t][k] else {
                continue;
            };
            let y = self.tri.triangles[u]
                .iter()
                .fold([0.0, 0.0], |s, &i| [s[0] + self.tri.points[i][0] / 3.0, s[1] + self.tri.points[i][1] / 3.0]);
            let c = self.tri.barycentric(t, y);
            *gk = match k {
                0 => (2.0 * c[2] + c[1] - 1.0) / (2.0 - 3.0 * c[2] - 3.0 * c[1]),
                1 => (2.0 * c[0] + c[2] - 1.0) / (2.0 - 3.0 * c[0] - 3.0 * c[2]),
                _ => (2.0 * c[1] + c[0] - 1.0) / (2.0 - 3.0 * c[1] - 3.0 * c[0]),
            };
        }

        let c0111 = (g[0] * (-c0300 + 3.0 * c0210 - 3.0 * c0120 + c0030) + (-c0300 + 2.0 * c0210 - c0120 + c0021 + c0201)) / 2.0;
        let c1011 = (g[1] * (-c0030 + 3.0 * c1020 - 3.0 * c2010 + c3000) + (-c0030 + 2.0 * c1020 - c2010 + c2001 + c0021)) / 2.0;
        let c1101 = (g[2] * (-c3000 + 3.0 * c2100 - 3.0 * c1200 + c0300) + (-c3000 + 2.0 * c2100 - c1200 + c2001 + c0201)) / 2.0;

        let c1002 = (c1101 + c1011 + c2001) / 3.0;
        let c0102 = (c1101 + c0111 + c0201) / 3.0;
        let c0012 = (c1011 + c0111 + c0021) / 3.0;
        let c0003 = (c1002 + c0102 + c0012) / 3.0;

        let m = b[0].min(b[1]).min(b[2]);
        let (b1, b2, b3, b4) = (b[0] - m, b[1] - m, b[2] - m, 3.0 * m);
        if b[0] == m {
            b2.powi(3) * c0300
                + 3.0 * b2 * b2 * b3 * c0210
                + 3.0 * b2 * b3 * b3 * c0120
                + b3.powi(3) * c0030
                + 3.0 * b2 * b2 * b4 * c0201
                + 6.0 * b2 * b3 * b4 * c0111
                + 3.0 * b3 * b3 * b4 * c0021
                + 3.0 * b2 * b4 * b4 * c0102
                + 3.0 * b3 * b4 * b4 * c0012
                + b4.powi(3) * c0003
        } else if b[1] == m {
            b1.powi(3) * c3000
                + 3.0 * b1 * b1 * b3 * c2010
                + 3.0 * b1 * b3 * b3 * c1020
                + b3.powi(3) * c0030
                + 3.0 * b1 * b1 * b4 * c2001
                + 6.0 * b1 * b3 * b4 * c1011
                + 3.0 * b3 * b3 * b4 * c0021
                + 3.0 * b1 * b4 * b4 * c1002
                + 3.0 * b3 * b4 * b4 * c0012
                + b4.powi(3) * c0003
        } else {
            b1.powi(3) * c3000
                + 3.0 * b1 * b1 * b2 * c2100
                + 3.0 * b1 * b2 * b2 * c1200
                + b2.powi(3) * c0300
                + 3.0 * b1 * b1 * b4 * c2001
                + 6.0 * b1 * b2 * b4 * c1101
                + 3.0 * b2 * b2 * b4 * c0201
                + 3.0 * b1 * b4 * b4 * c1002
                + 3.0 * b2 * b4 * b4 * c0102
                + b4.powi(3) * c0003
        }
    }
}
