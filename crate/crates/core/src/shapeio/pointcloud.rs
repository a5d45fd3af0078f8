//! ASCII XYZ and PLY point clouds, and their voxelization by flood fill.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{invalid, Error, Result};
use crate::field::{Grid, ScalarField};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub normals: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(invalid("point cloud coordinates must be finite"));
        }
        Ok(Self {
            points,
            normals: None,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Reads `.xyz` or `.ply` by extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .to_ascii_lowercase();
        match ext.as_str() {
            "ply" => {
                let text = String::from_utf8(text)
                    .map_err(|_| Error::parse(path, 1, "only ASCII PLY files are supported"))?;
                Self::from_ply(&text, path)
            }
            _ => {
                let text = String::from_utf8(text)
                    .map_err(|_| Error::parse(path, 1, "XYZ files must be text"))?;
                Self::from_xyz(&text, path)
            }
        }
    }

    /// One point per line: `x y z` or `x y z nx ny nz`. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn from_xyz(text: &str, path: &Path) -> Result<Self> {
        let mut points = Vec::new();
        let mut normals = Vec::new();
        let mut width = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals = parse_floats(line, path, i + 1)?;
            if !(vals.len() == 3 || vals.len() == 6) {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("expected 3 or 6 values, found {}", vals.len()),
                ));
            }
            if *width.get_or_insert(vals.len()) != vals.len() {
                return Err(Error::parse(path, i + 1, "inconsistent number of columns"));
            }
            points.push(Vector3::new(vals[0], vals[1], vals[2]));
            if vals.len() == 6 {
                normals.push(Vector3::new(vals[3], vals[4], vals[5]));
            }
        }
        let has_normals = width == Some(6);
        Ok(Self {
            points,
            normals: has_normals.then_some(normals),
        })
    }

    /// ASCII PLY; only the `x y z` (and optional `nx ny nz`) properties of
    /// the `vertex` element are read.
    pub fn from_ply(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        match lines.next() {
            Some((_, "ply")) => {}
            _ => return Err(Error::parse(path, 1, "missing `ply` magic")),
        }
        let mut n_vertex = None;
        let mut props: Vec<String> = Vec::new();
        let mut before_vertex = 0usize;
        let mut in_vertex = false;
        let mut seen_vertex = false;
        let mut header_end = 0;
        for (n, line) in lines.by_ref() {
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("format") => {
                    if tok.next() != Some("ascii") {
                        return Err(Error::parse(path, n, "only ASCII PLY files are supported"));
                    }
                }
                Some("comment") | Some("obj_info") | None => {}
                Some("element") => {
                    let name = tok.next().unwrap_or("");
                    let count = tok
                        .next()
                        .and_then(|c| c.parse::<usize>().ok())
                        .ok_or_else(|| Error::parse(path, n, "bad element count"))?;
                    in_vertex = name == "vertex";
                    if in_vertex {
                        n_vertex = Some(count);
                        seen_vertex = true;
                    } else if !seen_vertex {
                        before_vertex += count;
                    }
                }
                Some("property") => {
                    if in_vertex {
                        let name = tok
                            .last()
                            .ok_or_else(|| Error::parse(path, n, "property without a name"))?;
                        props.push(name.to_owned());
                    }
                }
                Some("end_header") => {
                    header_end = n;
                    break;
                }
                Some(other) => {
                    return Err(Error::parse(
                        path,
                        n,
                        format!("unexpected header keyword `{other}`"),
                    ))
                }
            }
        }
        if header_end == 0 {
            return Err(Error::parse(
                path,
                text.lines().count(),
                "missing `end_header`",
            ));
        }
        let count = n_vertex.ok_or_else(|| Error::parse(path, header_end, "no vertex element"))?;
        let col = |name: &str| props.iter().position(|p| p == name);
        let (ix, iy, iz) = match (col("x"), col("y"), col("z")) {
            (Some(x), Some(y), Some(z)) => (x, y, z),
            _ => {
                return Err(Error::parse(
                    path,
                    header_end,
                    "vertex element lacks x, y or z",
                ))
            }
        };
        let normal_cols = match (col("nx"), col("ny"), col("nz")) {
            (Some(a), Some(b), Some(c)) => Some((a, b, c)),
            _ => None,
        };
        let mut body = lines.filter(|(_, l)| !l.is_empty());
        for _ in 0..before_vertex {
            body.next();
        }
        let mut points = Vec::with_capacity(count);
        let mut normals = Vec::new();
        for _ in 0..count {
            let (n, line) = body.next().ok_or_else(|| {
                Error::parse(path, text.lines().count(), "fewer vertices than declared")
            })?;
            let vals = parse_floats(line, path, n)?;
            if vals.len() < props.len() {
                return Err(Error::parse(
                    path,
                    n,
                    format!("expected {} values, found {}", props.len(), vals.len()),
                ));
            }
            points.push(Vector3::new(vals[ix], vals[iy], vals[iz]));
            if let Some((a, b, c)) = normal_cols {
                normals.push(Vector3::new(vals[a], vals[b], vals[c]));
            }
        }
        Ok(Self {
            points,
            normals: normal_cols.map(|_| normals),
        })
    }

    pub fn to_xyz(&self) -> String {
        let mut s = String::new();
        for (i, p) in self.points.iter().enumerate() {
            write!(s, "{:?} {:?} {:?}", p.x, p.y, p.z).unwrap();
            if let Some(n) = self.normals.as_ref().map(|n| n[i]) {
                write!(s, " {:?} {:?} {:?}", n.x, n.y, n.z).unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn save_xyz(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_xyz()).map_err(|e| Error::io(path, e))
    }
}

fn parse_floats(line: &str, path: &Path, n: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| {
            let v = t
                .parse::<f64>()
                .map_err(|_| Error::parse(path, n, format!("not a number: `{t}`")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::parse(path, n, format!("non-finite value `{t}`")))
            }
        })
        .collect()
}

/// Occupancy grid of the solid bounded by a surface point cloud.
///
/// Every grid node within half a cell diagonal of a point is a surface node;
/// nodes reachable from the grid boundary through non-surface nodes
/// (6-connected) are outside. Surface nodes with an outside neighbour are
/// treated as outside, which removes most of the band's outward bias; all
/// remaining nodes are inside. The cloud must be
/// dense relative to the grid spacing and the grid must extend beyond the
/// cloud (use a padded testing grid).
pub fn voxelize(cloud: &PointCloud, grid: &Grid) -> Result<ScalarField> {
    if grid.dim() != 3 {
        return Err(invalid("voxelization needs a 3D grid"));
    }
    if cloud.is_empty() {
        return Err(invalid("cannot voxelize an empty point cloud"));
    }
    let dims = grid.dims().to_vec();
    let h: [f64; 3] = std::array::from_fn(|a| grid.spacing(a));
    let reach = 0.5 * (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt();
    let mut surface = vec![false; grid.len()];
    for p in &cloud.points {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let f = (p[a] - grid.min()[a]) / h[a];
            lo[a] = (f - 1.0).floor().clamp(0.0, (dims[a] - 1) as f64) as usize;
            hi[a] = (f + 1.0).ceil().clamp(0.0, (dims[a] - 1) as f64) as usize;
        }
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    let q = Vector3::new(grid.coord(0, i), grid.coord(1, j), grid.coord(2, k));
                    if (q - p).norm() <= reach {
                        surface[grid.index(&[i, j, k])] = true;
                    }
                }
            }
        }
    }
    let mut outside = vec![false; grid.len()];
    let mut queue = VecDeque::new();
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let boundary = i == 0
                    || j == 0
                    || k == 0
                    || i + 1 == dims[0]
                    || j + 1 == dims[1]
                    || k + 1 == dims[2];
                let idx = grid.index(&[i, j, k]);
                if boundary && !surface[idx] {
                    outside[idx] = true;
                    queue.push_back([i, j, k]);
                }
            }
        }
    }
    while let Some(c) = queue.pop_front() {
        for a in 0..3 {
            for step in [-1i64, 1] {
                let v = c[a] as i64 + step;
                if v < 0 || v >= dims[a] as i64 {
                    continue;
                }
                let mut n = c;
                n[a] = v as usize;
                let idx = grid.index(&n);
                if !surface[idx] && !outside[idx] {
                    outside[idx] = true;
                    queue.push_back(n);
                }
            }
        }
    }
    let mut values: Vec<f64> = outside.iter().map(|&o| if o { 0.0 } else { 1.0 }).collect();
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let c = [i, j, k];
                let idx = grid.index(&c);
                if !surface[idx] {
                    continue;
                }
                let touches_outside = (0..3).any(|a| {
                    [-1i64, 1].iter().any(|step| {
                        let v = c[a] as i64 + step;
                        if v < 0 || v >= dims[a] as i64 {
                            return true;
                        }
                        let mut n = c;
                        n[a] = v as usize;
                        outside[grid.index(&n)]
                    })
                });
                if touches_outside {
                    values[idx] = 0.0;
                }
            }
        }
    }
    ScalarField::on_grid(grid.clone(), values)
}
