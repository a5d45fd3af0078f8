//! Uniform-grid index of triangles for nearest-surface queries.

use nalgebra::Vector3;

use crate::error::{invalid, Result};

/// Closest point to `p` on triangle `(a, b, c)`.
pub fn closest_point_on_triangle(
    p: Vector3<f64>,
    a: Vector3<f64>,
    b: Vector3<f64>,
    c: Vector3<f64>,
) -> Vector3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Triangles bucketed into a uniform grid by bounding box.
#[derive(Clone, Debug)]
pub struct TriangleIndex {
    tris: Vec<[Vector3<f64>; 3]>,
    origin: Vector3<f64>,
    cell: Vector3<f64>,
    dims: [usize; 3],
    cells: Vec<Vec<u32>>,
}

impl TriangleIndex {
    pub fn new(vertices: &[Vector3<f64>], faces: &[[u32; 3]]) -> Result<Self> {
        if faces.is_empty() {
            return Err(invalid("cannot index an empty mesh"));
        }
        let tris: Vec<[Vector3<f64>; 3]> = faces
            .iter()
            .map(|f| {
                [
                    vertices[f[0] as usize],
                    vertices[f[1] as usize],
                    vertices[f[2] as usize],
                ]
            })
            .collect();
        let mut lo = tris[0][0];
        let mut hi = tris[0][0];
        for t in &tris {
            for v in t {
                lo = lo.inf(v);
                hi = hi.sup(v);
            }
        }
        let ext = (hi - lo).map(|e| e.max(1e-9));
        let volume = ext.x * ext.y * ext.z;
        let target_cells = (tris.len() as f64).max(1.0);
        let side = (volume / target_cells).cbrt().max(ext.max() / 256.0);
        let dims: [usize; 3] =
            std::array::from_fn(|a| ((ext[a] / side).ceil() as usize).clamp(1, 256));
        let cell = Vector3::from_fn(|a, _| ext[a] / dims[a] as f64);
        let mut index = Self {
            tris,
            origin: lo,
            cell,
            dims,
            cells: vec![Vec::new(); dims[0] * dims[1] * dims[2]],
        };
        for (ti, t) in index.tris.iter().enumerate() {
            let tlo = t[0].inf(&t[1]).inf(&t[2]);
            let thi = t[0].sup(&t[1]).sup(&t[2]);
            let a = index.cell_of(tlo);
            let b = index.cell_of(thi);
            for k in a[2]..=b[2] {
                for j in a[1]..=b[1] {
                    for i in a[0]..=b[0] {
                        let c = i + dims[0] * (j + dims[1] * k);
                        index.cells[c].push(ti as u32);
                    }
                }
            }
        }
        Ok(index)
    }

    fn cell_of(&self, p: Vector3<f64>) -> [usize; 3] {
        std::array::from_fn(|a| {
            let f = ((p[a] - self.origin[a]) / self.cell[a]).floor();
            f.clamp(0.0, (self.dims[a] - 1) as f64) as usize
        })
    }

    pub fn len(&self) -> usize {
        self.tris.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    /// Squared distance from `p` to the nearest triangle and that
    /// triangle's index.
    pub fn nearest(&self, p: Vector3<f64>) -> (f64, usize) {
        let c = self.cell_of(p);
        let min_cell = self.cell.min();
        let max_ring = self.dims.iter().copied().max().unwrap_or(1);
        let mut best = (f64::INFINITY, usize::MAX);
        for r in 0..=max_ring {
            let lo: [i64; 3] = std::array::from_fn(|a| c[a] as i64 - r as i64);
            let hi: [i64; 3] = std::array::from_fn(|a| c[a] as i64 + r as i64);
            for k in lo[2].max(0)..=hi[2].min(self.dims[2] as i64 - 1) {
                for j in lo[1].max(0)..=hi[1].min(self.dims[1] as i64 - 1) {
                    for i in lo[0].max(0)..=hi[0].min(self.dims[0] as i64 - 1) {
                        let on_shell = i == lo[0]
                            || i == hi[0]
                            || j == lo[1]
                            || j == hi[1]
                            || k == lo[2]
                            || k == hi[2];
                        if !on_shell {
                            continue;
                        }
                        let cell =
                            i as usize + self.dims[0] * (j as usize + self.dims[1] * k as usize);
                        for &ti in &self.cells[cell] {
                            let t = &self.tris[ti as usize];
                            let q = closest_point_on_triangle(p, t[0], t[1], t[2]);
                            let d = (q - p).norm_squared();
                            if d < best.0 || (d == best.0 && (ti as usize) < best.1) {
                                best = (d, ti as usize);
                            }
                        }
                    }
                }
            }
            let reach = r as f64 * min_cell;
            if best.0.is_finite() && best.0 <= reach * reach {
                break;
            }
        }
        best
    }

    pub fn distance(&self, p: Vector3<f64>) -> f64 {
        self.nearest(p).0.sqrt()
    }
}
