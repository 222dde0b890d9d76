//! Closed triangle meshes bounding the interior domain.

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Minimum face area (mm^2) below which a face counts as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

impl SurfaceMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = SurfaceMesh { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Check index bounds, face non-degeneracy, and that every undirected
    /// edge is shared by exactly two faces with opposite orientation.
    /// A disjoint union of closed components passes, which is what the
    /// multi-part phantoms produce.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for f in &self.faces {
            for &i in f {
                if i >= n {
                    return Err(Error::BadIndex { index: i, count: n });
                }
            }
        }
        for (fi, f) in self.faces.iter().enumerate() {
            if self.face_area(fi) <= DEGENERATE_AREA {
                return Err(Error::OpenMesh(format!("face {fi} is degenerate: {f:?}")));
            }
        }
        let mut edges: HashMap<(usize, usize), (u32, u32)> = HashMap::new();
        for f in &self.faces {
            for e in 0..3 {
                let a = f[e];
                let b = f[(e + 1) % 3];
                if a == b {
                    return Err(Error::OpenMesh(format!("face {f:?} repeats vertex {a}")));
                }
                let counts = edges.entry((a.min(b), a.max(b))).or_insert((0, 0));
                if a < b {
                    counts.0 += 1;
                } else {
                    counts.1 += 1;
                }
            }
        }
        for (&(a, b), &(fwd, rev)) in &edges {
            if fwd != 1 || rev != 1 {
                return Err(Error::OpenMesh(format!(
                    "edge ({a},{b}) seen {fwd} forward / {rev} reverse, need exactly one of each"
                )));
            }
        }
        Ok(())
    }

    pub fn face_vertices(&self, face: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.face_vertices(face);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn bbox(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bbox();
        (hi - lo).norm()
    }

    /// Generalized winding number of `x` (1 inside a single closed
    /// component, 0 outside, >= 2 inside overlapping components).
    pub fn winding_number(&self, x: &Vector3<f64>) -> f64 {
        let mut total = 0.0;
        for f in &self.faces {
            let a = self.vertices[f[0]] - x;
            let b = self.vertices[f[1]] - x;
            let c = self.vertices[f[2]] - x;
            let la = a.norm();
            let lb = b.norm();
            let lc = c.norm();
            let det = a.dot(&b.cross(&c));
            let denom = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
            total += 2.0 * det.atan2(denom);
        }
        total / (4.0 * std::f64::consts::PI)
    }

    /// Interior test for (possibly overlapping) unions of closed components.
    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        self.winding_number(x) >= 0.5
    }

    /// Closest point on the whole surface: returns (face, point, barycentric
    /// coordinates, distance). Ties are broken by the smallest face index.
    pub fn nearest_surface_point(
        &self,
        x: &Vector3<f64>,
    ) -> (usize, Vector3<f64>, [f64; 3], f64) {
        let mut best = (0usize, Vector3::zeros(), [0.0; 3], f64::INFINITY);
        for fi in 0..self.faces.len() {
            let tri = self.face_vertices(fi);
            let (p, bary) = closest_point_on_triangle(x, &tri);
            let d = (p - x).norm();
            if d < best.3 {
                best = (fi, p, bary, d);
            }
        }
        best
    }

    /// First intersection of a ray with the surface, if any: (t, face,
    /// barycentric coordinates) with the smallest positive t.
    pub fn first_ray_hit(
        &self,
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
    ) -> Option<(f64, usize, [f64; 3])> {
        let mut best: Option<(f64, usize, [f64; 3])> = None;
        for fi in 0..self.faces.len() {
            let tri = self.face_vertices(fi);
            if let Some((t, u, v)) = ray_triangle(origin, dir, &tri) {
                if t > 1e-12 && best.map_or(true, |(bt, _, _)| t < bt) {
                    best = Some((t, fi, [1.0 - u - v, u, v]));
                }
            }
        }
        best
    }
}

/// Closest point on a triangle and its barycentric coordinates.
///
/// Region classification follows the standard Voronoi-region walk.
pub fn closest_point_on_triangle(
    p: &Vector3<f64>,
    tri: &[Vector3<f64>; 3],
) -> (Vector3<f64>, [f64; 3]) {
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

/// Moeller-Trumbore ray/triangle intersection; returns (t, u, v).
pub fn ray_triangle(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    tri: &[Vector3<f64>; 3],
) -> Option<(f64, f64, f64)> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = origin - tri[0];
    let u = tvec.dot(&pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    (t > 0.0).then_some((t, u, v))
}

/// Unit regular tetrahedron mesh, outward oriented.
pub fn unit_tetrahedron() -> SurfaceMesh {
    let s = 1.0 / 3.0_f64.sqrt();
    let vertices = vec![
        Vector3::new(s, s, s),
        Vector3::new(s, -s, -s),
        Vector3::new(-s, s, -s),
        Vector3::new(-s, -s, s),
    ];
    let faces = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
    SurfaceMesh::new(vertices, faces).expect("tetrahedron is closed")
}
