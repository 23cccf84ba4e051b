use std::collections::HashMap;

use spade::{DelaunayTriangulation, Point2, Triangulation as _};

use crate::error::{Error, Result};

/// Triangles (counter-clockwise vertex indices into `points`) with
/// adjacency: `neighbors[t][k]` is the triangle across the edge opposite
/// vertex `k`, `None` on the hull.
#[derive(Debug, Clone)]
pub struct Triangulation {
    pub points: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub neighbors: Vec<[Option<usize>; 3]>,
}

pub(crate) fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Whether `p` lies strictly inside the circumcircle of CCW triangle `abc`.
pub fn in_circumcircle(a: [f64; 2], b: [f64; 2], c: [f64; 2], p: [f64; 2]) -> bool {
    let (adx, ady) = (a[0] - p[0], a[1] - p[1]);
    let (bdx, bdy) = (b[0] - p[0], b[1] - p[1]);
    let (cdx, cdy) = (c[0] - p[0], c[1] - p[1]);
    let det = (adx * adx + ady * ady) * (bdx * cdy - cdx * bdy) - (bdx * bdx + bdy * bdy) * (adx * cdy - cdx * ady)
        + (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady);
    let scale = [adx, ady, bdx, bdy, cdx, cdy].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    det > 1e-12 * scale.powi(4)
}

pub fn delaunay_triangulate(points: &[[f64; 2]]) -> Result<Triangulation> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!("{} points cannot be triangulated", points.len())));
    }
    let mut dt: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::new();
    let mut index_of = HashMap::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        if !p[0].is_finite() || !p[1].is_finite() {
            return Err(Error::Degenerate(format!("point {i} is not finite")));
        }
        let h = dt
            .insert(Point2::new(p[0], p[1]))
            .map_err(|e| Error::Degenerate(format!("point {i}: {e:?}")))?;
        if index_of.insert(h.index(), i).is_some() {
            return Err(Error::Degenerate(format!("duplicate point {i} at {p:?}")));
        }
    }
    let mut triangles = Vec::with_capacity(dt.num_inner_faces());
    for face in dt.inner_faces() {
        let v = face.vertices().map(|h| index_of[&h.fix().index()]);
        let t = if orient(points[v[0]], points[v[1]], points[v[2]]) > 0.0 {
            v
        } else {
            [v[0], v[2], v[1]]
        };
        triangles.push(t);
    }
    if triangles.is_empty() {
        return Err(Error::Degenerate("all points are collinear".into()));
    }
    let mut edges: HashMap<(usize, usize), (usize, usize)> = HashMap::with_capacity(3 * triangles.len());
    let mut neighbors = vec![[None; 3]; triangles.len()];
    for (t, tri) in triangles.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[(k + 1) % 3], tri[(k + 2) % 3]);
            let key = (a.min(b), a.max(b));
            if let Some((u, j)) = edges.remove(&key) {
                neighbors[t][k] = Some(u);
                neighbors[u][j] = Some(t);
            } else {
                edges.insert(key, (t, k));
            }
        }
    }
    Ok(Triangulation {
        points: points.to_vec(),
        triangles,
        neighbors,
    })
}

/// Where a query landed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Location {
    /// triangle index and barycentric coordinates
    Inside(usize, [f64; 3]),
    Outside,
}

impl Triangulation {
    pub fn barycentric(&self, t: usize, p: [f64; 2]) -> [f64; 3] {
        let [a, b, c] = self.triangles[t].map(|i| self.points[i]);
        let area = orient(a, b, c);
        let l1 = orient(p, b, c) / area;
        let l2 = orient(a, p, c) / area;
        [l1, l2, 1.0 - l1 - l2]
    }

    /// Visibility walk from triangle `start`.
    pub fn locate(&self, p: [f64; 2], start: usize) -> Location {
        let mut t = start.min(self.triangles.len() - 1);
        // a walk on a Delaunay triangulation cannot cycle; the bound only
        // guards against numerically inconsistent orientation tests
        for _ in 0..4 * self.triangles.len() + 8 {
            let tri = self.triangles[t];
            let mut next = None;
            let mut outside = false;
            for k in 0..3 {
                let (a, b) = (self.points[tri[(k + 1) % 3]], self.points[tri[(k + 2) % 3]]);
                if orient(a, b, p) < 0.0 {
                    match self.neighbors[t][k] {
                        Some(u) => {
                            next = Some(u);
                            break;
                        }
                        None => outside = true,
                    }
                }
            }
            match next {
                Some(u) => t = u,
                None if outside => return Location::Outside,
                None => return Location::Inside(t, self.barycentric(t, p)),
            }
        }
        self.locate_brute(p)
    }

    fn locate_brute(&self, p: [f64; 2]) -> Location {
        for t in 0..self.triangles.len() {
            let b = self.barycentric(t, p);
            if b.iter().all(|&v| v >= -1e-12) {
                return Location::Inside(t, b);
            }
        }
        Location::Outside
    }

    /// Closest point on the hull boundary, with the hull triangle holding it.
    pub fn nearest_hull_point(&self, p: [f64; 2]) -> (usize, [f64; 2]) {
        let mut best = (f64::INFINITY, 0, p);
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                if self.neighbors[t][k].is_some() {
                    continue;
                }
                let (a, b) = (self.points[tri[(k + 1) % 3]], self.points[tri[(k + 2) % 3]]);
                let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
                let s = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
                let q = [a[0] + s * dx, a[1] + s * dy];
                let d = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
                if d < best.0 {
                    best = (d, t, q);
                }
            }
        }
        (best.1, best.2)
    }

    /// Indices of the points sharing an edge with each point.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.points.len()];
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                if !out[a].contains(&b) {
                    out[a].push(b);
                }
                if !out[b].contains(&a) {
                    out[b].push(a);
                }
            }
        }
        out
    }
}
