//! Scalar values sampled on point lists or regular 2D/3D grids, and the
//! plain-text grid format.
//!
//! Text layout (see `docs/formats.md`):
//!
//! ```text
//! scalar-field 1
//! dims 3 2
//! min -1 -1
//! max 1 1
//! values
//! 0.1 0.2 0.3
//! 0.4 0.5 0.6
//! ```
//!
//! Values are row-major with `x` varying fastest; each line holds one row of
//! `dims[0]` values, rows ordered by `y` then `z`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Vector2, Vector3};

use crate::error::{invalid, Error, Result};

const MAGIC: &str = "scalar-field 1";

/// A regular grid of nodes spanning `[min, max]` per axis, end points included.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    dims: Vec<usize>,
    min: Vec<f64>,
    max: Vec<f64>,
}

impl Grid {
    pub fn new(dims: Vec<usize>, min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if !(dims.len() == 2 || dims.len() == 3) {
            return Err(invalid(format!(
                "grids are 2D or 3D, got {} axes",
                dims.len()
            )));
        }
        if min.len() != dims.len() || max.len() != dims.len() {
            return Err(invalid("bounds must match the grid dimension"));
        }
        if dims.iter().any(|&d| d < 2) {
            return Err(invalid(format!(
                "every grid axis needs at least 2 nodes, got {dims:?}"
            )));
        }
        for (a, b) in min.iter().zip(&max) {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(invalid(format!("degenerate grid bounds [{a}, {b}]")));
            }
        }
        Ok(Self { dims, min, max })
    }

    pub fn square(resolution: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![resolution; 2], vec![lo; 2], vec![hi; 2])
    }

    pub fn cube(resolution: usize, lo: [f64; 3], hi: [f64; 3]) -> Result<Self> {
        Self::new(vec![resolution; 3], lo.to_vec(), hi.to_vec())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.max[axis] - self.min[axis]) / (self.dims[axis] - 1) as f64
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.dims[axis] {
            self.max[axis]
        } else {
            self.min[axis] + i as f64 * self.spacing(axis)
        }
    }

    pub fn index(&self, ijk: &[usize]) -> usize {
        let mut idx = 0;
        for a in (0..self.dims.len()).rev() {
            idx = idx * self.dims[a] + ijk[a];
        }
        idx
    }

    pub fn points2(&self) -> Vec<Vector2<f64>> {
        assert_eq!(self.dim(), 2, "points2 on a {}D grid", self.dim());
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.dims[1] {
            for i in 0..self.dims[0] {
                out.push(Vector2::new(self.coord(0, i), self.coord(1, j)));
            }
        }
        out
    }

    pub fn points3(&self) -> Vec<Vector3<f64>> {
        assert_eq!(self.dim(), 3, "points3 on a {}D grid", self.dim());
        let mut out = Vec::with_capacity(self.len());
        for k in 0..self.dims[2] {
            for j in 0..self.dims[1] {
                for i in 0..self.dims[0] {
                    out.push(Vector3::new(
                        self.coord(0, i),
                        self.coord(1, j),
                        self.coord(2, k),
                    ));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layout {
    /// Values follow the order of an explicit query list.
    List(usize),
    Grid(Grid),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub layout: Layout,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn list(values: Vec<f64>) -> Self {
        Self {
            layout: Layout::List(values.len()),
            values,
        }
    }

    pub fn on_grid(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "grid has {} nodes but {} values were given",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self {
            layout: Layout::Grid(grid),
            values,
        })
    }

    /// Samples `f` at every node of a 2D grid.
    pub fn sample2(grid: Grid, f: impl Fn(Vector2<f64>) -> f64) -> Self {
        let values = grid.points2().into_iter().map(f).collect();
        Self {
            layout: Layout::Grid(grid),
            values,
        }
    }

    pub fn sample3(grid: Grid, f: impl Fn(Vector3<f64>) -> f64) -> Self {
        let values = grid.points3().into_iter().map(f).collect();
        Self {
            layout: Layout::Grid(grid),
            values,
        }
    }

    pub fn grid(&self) -> Option<&Grid> {
        match &self.layout {
            Layout::Grid(g) => Some(g),
            Layout::List(_) => None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_text(&self) -> Result<String> {
        let grid = self
            .grid()
            .ok_or_else(|| invalid("only grid fields have a text form"))?;
        let mut s = String::new();
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let dims = grid
            .dims
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(s, "{MAGIC}").unwrap();
        writeln!(s, "dims {dims}").unwrap();
        writeln!(s, "min {}", join(&grid.min)).unwrap();
        writeln!(s, "max {}", join(&grid.max)).unwrap();
        writeln!(s, "values").unwrap();
        for row in self.values.chunks(grid.dims[0]) {
            writeln!(s, "{}", join(row)).unwrap();
        }
        Ok(s)
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines
                .by_ref()
                .find(|(_, l)| !l.is_empty() && !l.starts_with('#'))
                .ok_or_else(|| {
                    Error::parse(path, 0, format!("unexpected end of file, expected {what}"))
                })
        };

        let (n, magic) = next("header")?;
        if magic != MAGIC {
            return Err(Error::parse(path, n, format!("expected `{MAGIC}`")));
        }
        let keyed = |(n, line): (usize, &str), key: &str| -> Result<Vec<String>> {
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(Error::parse(path, n, format!("expected `{key}`")));
            }
            Ok(it.map(str::to_owned).collect())
        };
        let num = |n: usize, s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::parse(path, n, format!("not a number: `{s}`")))
        };

        let l = next("dims")?;
        let dims = keyed(l, "dims")?
            .iter()
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| Error::parse(path, l.0, format!("bad size `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let l = next("min")?;
        let min = keyed(l, "min")?
            .iter()
            .map(|s| num(l.0, s))
            .collect::<Result<Vec<_>>>()?;
        let l = next("max")?;
        let max = keyed(l, "max")?
            .iter()
            .map(|s| num(l.0, s))
            .collect::<Result<Vec<_>>>()?;
        let grid = Grid::new(dims, min, max).map_err(|e| Error::parse(path, l.0, e.to_string()))?;
        let l = next("values")?;
        if l.1 != "values" {
            return Err(Error::parse(path, l.0, "expected `values`"));
        }

        let mut values = Vec::with_capacity(grid.len());
        let mut last = l.0;
        for (n, line) in lines {
            last = n;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            for tok in line.split_whitespace() {
                values.push(num(n, tok)?);
            }
        }
        if values.len() != grid.len() {
            return Err(Error::parse(
                path,
                last,
                format!("expected {} values, found {}", grid.len(), values.len()),
            ));
        }
        Ok(Self {
            layout: Layout::Grid(grid),
            values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_nodes_include_bounds() {
        let g = Grid::square(5, -1.0, 1.0).unwrap();
        let pts = g.points2();
        assert_eq!(pts.len(), 25);
        assert_eq!(pts[0], Vector2::new(-1.0, -1.0));
        assert_eq!(pts[24], Vector2::new(1.0, 1.0));
        assert_eq!(pts[1], Vector2::new(-0.5, -1.0));
        assert_eq!(g.index(&[1, 0]), 1);
        assert_eq!(g.index(&[0, 1]), 5);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid::new(vec![1, 4], vec![0.0; 2], vec![1.0; 2]).is_err());
        assert!(Grid::new(vec![4, 4], vec![0.0; 2], vec![0.0, 1.0]).is_err());
        assert!(Grid::new(vec![4], vec![0.0], vec![1.0]).is_err());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let g = Grid::cube(3, [-1.0, -0.5, 0.0], [1.0, 0.5, 2.0]).unwrap();
        let f = ScalarField::sample3(g, |p| (p.x * 0.1).sin() + p.y / 3.0 - p.z * 1e-7);
        let text = f.to_text().unwrap();
        let back = ScalarField::from_text(&text, Path::new("mem")).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "scalar-field 1\ndims 2 2\nmin 0 0\nmax 1 1\nvalues\n1 2\n3 x\n";
        match ScalarField::from_text(text, Path::new("f.grid")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("unexpected {other:?}"),
        }
        let short = "scalar-field 1\ndims 2 2\nmin 0 0\nmax 1 1\nvalues\n1 2\n";
        assert!(matches!(
            ScalarField::from_text(short, Path::new("f")),
            Err(Error::Parse { .. })
        ));
    }
}
