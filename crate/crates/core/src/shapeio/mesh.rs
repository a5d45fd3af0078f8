//! Indexed triangle meshes: iso-surface extraction, binary STL and ASCII
//! OBJ input/output, and area-uniform surface sampling.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::field::ScalarField;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[u32; 3]>,
}

/// Corner offsets of a grid cube, bit `a` of the index selecting the upper
/// node on axis `a`.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

/// Six tetrahedra sharing the cube diagonal 0–7. Every cube is split the
/// same way, so the faces shared by neighbouring cubes are split
/// identically and the extracted surface has no cracks.
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

/// Iso-surface of a 3D grid field at `iso`, oriented with normals pointing
/// from values above `iso` (inside) to values below it. Cells are split
/// into tetrahedra, which removes the ambiguous configurations of the
/// classic cube table and yields a crack-free surface. A field entirely on
/// one side of `iso` yields an empty mesh.
pub fn marching_cubes(field: &ScalarField, iso: f64) -> Result<Mesh> {
    let grid = field
        .grid()
        .filter(|g| g.dim() == 3)
        .ok_or_else(|| invalid("iso-surface extraction needs a 3D grid field"))?;
    if !iso.is_finite() {
        return Err(invalid("iso level must be finite"));
    }
    let d = grid.dims();
    let node = |ijk: [usize; 3]| grid.index(&ijk);
    let pos = |ijk: [usize; 3]| {
        Vector3::new(
            grid.coord(0, ijk[0]),
            grid.coord(1, ijk[1]),
            grid.coord(2, ijk[2]),
        )
    };
    let mut mesh = Mesh::default();
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();
    let mut vertex_on = |a: ([usize; 3], usize), b: ([usize; 3], usize), mesh: &mut Mesh| -> u32 {
        let (a, b) = if a.1 < b.1 { (a, b) } else { (b, a) };
        *edge_vertex.entry((a.1, b.1)).or_insert_with(|| {
            let (va, vb) = (field.values[a.1], field.values[b.1]);
            let t = ((iso - va) / (vb - va)).clamp(0.0, 1.0);
            let p = pos(a.0) + (pos(b.0) - pos(a.0)) * t;
            mesh.vertices.push(p);
            (mesh.vertices.len() - 1) as u32
        })
    };
    for k in 0..d[2] - 1 {
        for j in 0..d[1] - 1 {
            for i in 0..d[0] - 1 {
                let corners: [([usize; 3], usize); 8] = std::array::from_fn(|c| {
                    let ijk = [i + CORNERS[c][0], j + CORNERS[c][1], k + CORNERS[c][2]];
                    (ijk, node(ijk))
                });
                let inside: [bool; 8] = std::array::from_fn(|c| field.values[corners[c].1] > iso);
                if inside.iter().all(|&x| x) || inside.iter().all(|&x| !x) {
                    continue;
                }
                for tet in TETS {
                    let v = tet.map(|c| corners[c]);
                    let ins: Vec<usize> = (0..4).filter(|&q| inside[tet[q]]).collect();
                    let outs: Vec<usize> = (0..4).filter(|&q| !inside[tet[q]]).collect();
                    let polygon: Vec<u32> = match ins.len() {
                        1 => outs
                            .iter()
                            .map(|&o| vertex_on(v[ins[0]], v[o], &mut mesh))
                            .collect(),
                        3 => ins
                            .iter()
                            .map(|&q| vertex_on(v[q], v[outs[0]], &mut mesh))
                            .collect(),
                        2 => vec![
                            vertex_on(v[ins[0]], v[outs[0]], &mut mesh),
                            vertex_on(v[ins[0]], v[outs[1]], &mut mesh),
                            vertex_on(v[ins[1]], v[outs[1]], &mut mesh),
                            vertex_on(v[ins[1]], v[outs[0]], &mut mesh),
                        ],
                        _ => continue,
                    };
                    let centroid = |s: &[usize]| {
                        s.iter().map(|&q| pos(v[q].0)).sum::<Vector3<f64>>() / s.len() as f64
                    };
                    let outward = centroid(&outs) - centroid(&ins);
                    for t in 1..polygon.len() - 1 {
                        let mut f = [polygon[0], polygon[t], polygon[t + 1]];
                        let [a, b, c] = f.map(|x| mesh.vertices[x as usize]);
                        if (b - a).cross(&(c - a)).dot(&outward) < 0.0 {
                            f.swap(1, 2);
                        }
                        mesh.faces.push(f);
                    }
                }
            }
        }
    }
    Ok(mesh)
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, f: usize) -> [Vector3<f64>; 3] {
        self.faces[f].map(|i| self.vertices[i as usize])
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.triangle(f);
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .sum()
    }

    /// Signed volume enclosed by a closed, outward-oriented mesh.
    pub fn volume(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.triangle(f);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// `n` points distributed uniformly by area.
    pub fn sample_surface(&self, n: usize, seed: u64) -> Result<Vec<Vector3<f64>>> {
        if self.is_empty() {
            return Err(invalid("cannot sample the surface of an empty mesh"));
        }
        let mut cdf = Vec::with_capacity(self.faces.len());
        let mut acc = 0.0;
        for f in 0..self.faces.len() {
            let [a, b, c] = self.triangle(f);
            acc += 0.5 * (b - a).cross(&(c - a)).norm();
            cdf.push(acc);
        }
        if acc <= 0.0 {
            return Err(invalid("mesh has zero surface area"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n)
            .map(|_| {
                let u = rng.gen::<f64>() * acc;
                let f = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                let [a, b, c] = self.triangle(f);
                let r1 = rng.gen::<f64>().sqrt();
                let r2 = rng.gen::<f64>();
                a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2)
            })
            .collect())
    }

    /// Binary STL (single precision, as the format prescribes).
    pub fn to_stl(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(84 + 50 * self.faces.len());
        let mut header = [0u8; 80];
        let tag = b"extrudekit binary stl";
        header[..tag.len()].copy_from_slice(tag);
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.faces.len() as u32).to_le_bytes());
        for f in 0..self.faces.len() {
            let [a, b, c] = self.triangle(f);
            let n = (b - a).cross(&(c - a));
            let n = if n.norm() > 0.0 { n.normalize() } else { n };
            for v in [n, a, b, c] {
                for x in v.iter() {
                    out.extend_from_slice(&(*x as f32).to_le_bytes());
                }
            }
            out.extend_from_slice(&0u16.to_le_bytes());
        }
        out
    }

    /// Binary STL; coincident corners are merged into shared vertices.
    pub fn from_stl(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 84 {
            return Err(Error::parse(path, 0, "file too short for binary STL"));
        }
        let count = u32::from_le_bytes(bytes[80..84].try_into().expect("4 bytes")) as usize;
        if bytes.len() != 84 + 50 * count {
            return Err(Error::parse(
                path,
                0,
                format!(
                    "binary STL declares {count} triangles but holds {} bytes",
                    bytes.len()
                ),
            ));
        }
        let mut mesh = Mesh::default();
        let mut seen: HashMap<[u32; 3], u32> = HashMap::new();
        for t in 0..count {
            let base = 84 + 50 * t + 12;
            let mut face = [0u32; 3];
            for (c, slot) in face.iter_mut().enumerate() {
                let at = base + 12 * c;
                let xs: [f32; 3] = std::array::from_fn(|a| {
                    f32::from_le_bytes(
                        bytes[at + 4 * a..at + 4 * a + 4]
                            .try_into()
                            .expect("4 bytes"),
                    )
                });
                let key = xs.map(f32::to_bits);
                *slot = *seen.entry(key).or_insert_with(|| {
                    mesh.vertices
                        .push(Vector3::new(xs[0] as f64, xs[1] as f64, xs[2] as f64));
                    (mesh.vertices.len() - 1) as u32
                });
            }
            mesh.faces.push(face);
        }
        Ok(mesh)
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::from("# extrudekit mesh\n");
        for v in &self.vertices {
            writeln!(s, "v {:?} {:?} {:?}", v.x, v.y, v.z).unwrap();
        }
        for f in &self.faces {
            writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
        }
        s
    }

    /// ASCII OBJ: `v` and `f` records; polygons are split into fans and
    /// texture/normal indices are ignored.
    pub fn from_obj(text: &str, path: &Path) -> Result<Self> {
        let mut mesh = Mesh::default();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("v") => {
                    let xs = tok
                        .take(3)
                        .map(|t| {
                            t.parse::<f64>()
                                .map_err(|_| Error::parse(path, n, format!("not a number: `{t}`")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    if xs.len() != 3 {
                        return Err(Error::parse(path, n, "vertex needs three coordinates"));
                    }
                    mesh.vertices.push(Vector3::new(xs[0], xs[1], xs[2]));
                }
                Some("f") => {
                    let nv = mesh.vertices.len() as i64;
                    let idx = tok
                        .map(|t| {
                            let head = t.split('/').next().unwrap_or("");
                            let v: i64 = head.parse().map_err(|_| {
                                Error::parse(path, n, format!("bad face index `{t}`"))
                            })?;
                            let v = if v < 0 { nv + v } else { v - 1 };
                            if v < 0 || v >= nv {
                                return Err(Error::parse(
                                    path,
                                    n,
                                    format!("face index `{t}` out of range"),
                                ));
                            }
                            Ok(v as u32)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    if idx.len() < 3 {
                        return Err(Error::parse(path, n, "face needs at least three vertices"));
                    }
                    for t in 1..idx.len() - 1 {
                        mesh.faces.push([idx[0], idx[t], idx[t + 1]]);
                    }
                }
                _ => {}
            }
        }
        Ok(mesh)
    }

    /// Writes STL or OBJ according to the file extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .to_ascii_lowercase();
        let bytes = match ext.as_str() {
            "stl" => self.to_stl(),
            "obj" => self.to_obj().into_bytes(),
            _ => {
                return Err(invalid(format!(
                    "unknown mesh extension `{ext}` (use .stl or .obj)"
                )))
            }
        };
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .to_ascii_lowercase();
        match ext.as_str() {
            "stl" => Self::from_stl(&bytes, path),
            "obj" => {
                let text = String::from_utf8(bytes)
                    .map_err(|_| Error::parse(path, 0, "OBJ files must be text"))?;
                Self::from_obj(&text, path)
            }
            _ => Err(invalid(format!(
                "unknown mesh extension `{ext}` (use .stl or .obj)"
            ))),
        }
    }
}
