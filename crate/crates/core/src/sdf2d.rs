//! Numerical signed distance fields of closed parametric curves.
//!
//! The curve is sampled at evenly spaced parameter values. A query finds the
//! nearest sample, measures the distance to the curve polyline around it and
//! takes the sign from the curve normal at that sample. Values are positive
//! inside the curve and negative outside.
//!
//! Any curve family can be sampled through [`ClosedCurve`]; only point and
//! derivative evaluation are needed.

use nalgebra::{DMatrix, Vector2};
use rayon::prelude::*;

use crate::dual::Dual;
use crate::error::{invalid, Result};
use crate::field::{Layout, ScalarField};
use crate::sketch::{self, ControlPolygon, SketchParams, LOCAL_DOF};

/// Added to the sign denominator to avoid division by zero.
pub const SIGN_EPS: f64 = 1e-8;

/// Samples per curve used while fitting.
pub const DEFAULT_SAMPLES: usize = 100;

/// Samples per curve used for accuracy checks.
pub const ACCURATE_SAMPLES: usize = 400;

/// A closed curve made of segments parameterized over `[0, 1]`, traced
/// counter-clockwise.
pub trait ClosedCurve {
    fn segment_count(&self) -> usize;
    fn point(&self, segment: usize, t: f64) -> Vector2<f64>;
    fn derivative(&self, segment: usize, t: f64) -> Vector2<f64>;
}

impl ClosedCurve for ControlPolygon {
    fn segment_count(&self) -> usize {
        self.n_curves()
    }

    fn point(&self, segment: usize, t: f64) -> Vector2<f64> {
        ControlPolygon::point(self, segment, t)
    }

    fn derivative(&self, segment: usize, t: f64) -> Vector2<f64> {
        ControlPolygon::derivative(self, segment, t)
    }
}

/// Axis-aligned ellipse traced as one segment.
#[derive(Clone, Copy, Debug)]
pub struct Ellipse {
    pub center: Vector2<f64>,
    pub radii: Vector2<f64>,
}

impl ClosedCurve for Ellipse {
    fn segment_count(&self) -> usize {
        1
    }

    fn point(&self, _: usize, t: f64) -> Vector2<f64> {
        let a = std::f64::consts::TAU * t;
        self.center + Vector2::new(self.radii.x * a.cos(), self.radii.y * a.sin())
    }

    fn derivative(&self, _: usize, t: f64) -> Vector2<f64> {
        let a = std::f64::consts::TAU * t;
        std::f64::consts::TAU * Vector2::new(-self.radii.x * a.sin(), self.radii.y * a.cos())
    }
}

/// How the unsigned distance is measured once the nearest sample is known.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DistanceMode {
    /// Distance to the nearest sample itself.
    Samples,
    /// Distance to the two polyline segments adjacent to the nearest sample.
    #[default]
    Segments,
}

/// Outward normal `(y', -x')` of a counter-clockwise tangent.
fn outward(t: Vector2<f64>) -> Vector2<f64> {
    Vector2::new(t.y, -t.x)
}

/// Partials of sample positions and normals with respect to the curve's
/// fitting variables, stored row-major as `samples × 2 × n_vars`.
#[derive(Clone, Debug)]
struct SampleJacobian {
    n_vars: usize,
    point: Vec<f64>,
    normal: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SampledSketch {
    samples: Vec<Vector2<f64>>,
    params: Vec<(usize, f64)>,
    normals: Vec<Vector2<f64>>,
    samples_per_curve: usize,
    mode: DistanceMode,
    jacobian: Option<SampleJacobian>,
    index: Option<SampleGrid>,
}

/// Result of one signed distance query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdfQuery {
    pub sdf: f64,
    /// Index of the nearest sample.
    pub sample: usize,
    /// `(segment, t)` of the nearest sample.
    pub closest_param: (usize, f64),
    pub closest_point: Vector2<f64>,
    /// Polyline edge `(a, b, τ)` holding the closest point `S_a + τ (S_b − S_a)`.
    edge: (usize, usize, f64, bool),
}

/// Sensitivities of one query's sdf.
#[derive(Clone, Copy, Debug)]
pub struct SdfPartials {
    pub query: Vector2<f64>,
    /// `(sample index, ∂sdf/∂sample)` for the two edge end points.
    pub points: [(usize, Vector2<f64>); 2],
    /// `(sample index, ∂sdf/∂normal)`.
    pub normal: (usize, Vector2<f64>),
}

/// Per-sample adjoint accumulators, pulled back to fitting variables by
/// [`SampledSketch::pullback`].
#[derive(Clone, Debug)]
pub struct SampleAdjoint {
    pub point: Vec<Vector2<f64>>,
    pub normal: Vec<Vector2<f64>>,
}

impl SampleAdjoint {
    pub fn zeros(n: usize) -> Self {
        Self {
            point: vec![Vector2::zeros(); n],
            normal: vec![Vector2::zeros(); n],
        }
    }

    pub fn add(&mut self, partials: &SdfPartials, scale: f64) {
        for (i, g) in partials.points {
            self.point[i] += scale * g;
        }
        self.normal[partials.normal.0] += scale * partials.normal.1;
    }

    pub fn merge(mut self, other: &Self) -> Self {
        for (a, b) in self.point.iter_mut().zip(&other.point) {
            *a += b;
        }
        for (a, b) in self.normal.iter_mut().zip(&other.normal) {
            *a += b;
        }
        self
    }
}

/// Samples a rational Bézier sketch with `n` points per curve.
pub fn sample_sketch(params: &SketchParams, n: usize) -> Result<SampledSketch> {
    SampledSketch::from_curve(&params.polygon(), n)
}

impl SampledSketch {
    /// Samples `t = i/n, i = 0..n-1` on every segment. Normals at segment
    /// joints average the two one-sided unit normals.
    pub fn from_curve<C: ClosedCurve>(curve: &C, n: usize) -> Result<Self> {
        if n < 4 {
            return Err(invalid(format!(
                "need at least 4 samples per curve, got {n}"
            )));
        }
        let segs = curve.segment_count();
        if segs == 0 {
            return Err(invalid("curve has no segments"));
        }
        let mut samples = Vec::with_capacity(segs * n);
        let mut params = Vec::with_capacity(segs * n);
        let mut normals = Vec::with_capacity(segs * n);
        for k in 0..segs {
            for i in 0..n {
                let t = i as f64 / n as f64;
                samples.push(curve.point(k, t));
                params.push((k, t));
                let mut nrm = outward(curve.derivative(k, t));
                let len = nrm.norm();
                nrm = if len > 0.0 {
                    nrm / len
                } else {
                    Vector2::zeros()
                };
                if i == 0 {
                    let prev = outward(curve.derivative((k + segs - 1) % segs, 1.0));
                    let plen = prev.norm();
                    if plen > 0.0 {
                        nrm += prev / plen;
                    }
                    let m = nrm.norm();
                    nrm = if m > 0.0 { nrm / m } else { Vector2::zeros() };
                }
                normals.push(nrm);
            }
        }
        patch_zero_normals(&mut normals);
        Ok(Self {
            samples,
            params,
            normals,
            samples_per_curve: n,
            mode: DistanceMode::default(),
            jacobian: None,
            index: None,
        })
    }

    /// Like [`sample_sketch`], additionally recording the partials of every
    /// sample and normal with respect to the sketch's unconstrained variables
    /// (see [`SketchParams::to_unconstrained`]).
    pub fn with_jacobian(params: &SketchParams, n: usize) -> Result<Self> {
        let poly = params.polygon();
        let mut out = Self::from_curve(&poly, n)?;
        let local = sketch::local_jacobians(params);
        let nv = params.free_count();
        let segs = poly.n_curves();
        let total = segs * n;
        let mut jp = vec![0.0; total * 2 * nv];
        let mut jn = vec![0.0; total * 2 * nv];

        let to_global = |loc: [Dual<LOCAL_DOF>; 2], m: &DMatrix<f64>, out: &mut [f64]| {
            for (a, comp) in loc.iter().enumerate() {
                for c in 0..nv {
                    let mut s = 0.0;
                    for r in 0..LOCAL_DOF {
                        s += comp.d[r] * m[(r, c)];
                    }
                    out[a * nv + c] = s;
                }
            }
        };
        let unit_normal = |d: [Dual<LOCAL_DOF>; 2]| {
            use crate::dual::Scalar;
            let nx = d[1];
            let ny = -d[0];
            let len = (nx * nx + ny * ny).sqrt();
            if len.v > 0.0 {
                [nx / len, ny / len]
            } else {
                [Dual::constant(0.0); 2]
            }
        };

        for k in 0..segs {
            for i in 0..n {
                let s = k * n + i;
                let t = i as f64 / n as f64;
                let (p, d) = poly.eval_local_dual(k, t);
                to_global(p, &local[k], &mut jp[s * 2 * nv..(s + 1) * 2 * nv]);
                let mut gn = vec![0.0; 2 * nv];
                to_global(unit_normal(d), &local[k], &mut gn);
                if i == 0 {
                    let prev = (k + segs - 1) % segs;
                    let (_, dp) = poly.eval_local_dual(prev, 1.0);
                    let mut gp = vec![0.0; 2 * nv];
                    to_global(unit_normal(dp), &local[prev], &mut gp);
                    let d0 = poly.derivative(k, 0.0);
                    let d1 = poly.derivative(prev, 1.0);
                    let m = outward(d0).normalize() + outward(d1).normalize();
                    let len = m.norm();
                    let nrm = m / len;
                    // d(m/|m|) = (I - n nᵀ) dm / |m|
                    for c in 0..nv {
                        let dm = Vector2::new(gn[c] + gp[c], gn[nv + c] + gp[nv + c]);
                        let dn = (dm - nrm * nrm.dot(&dm)) / len;
                        gn[c] = dn.x;
                        gn[nv + c] = dn.y;
                    }
                }
                jn[s * 2 * nv..(s + 1) * 2 * nv].copy_from_slice(&gn);
            }
        }
        out.jacobian = Some(SampleJacobian {
            n_vars: nv,
            point: jp,
            normal: jn,
        });
        Ok(out)
    }

    pub fn with_distance_mode(mut self, mode: DistanceMode) -> Self {
        self.mode = mode;
        self
    }

    /// Enables the uniform-grid nearest sample search. Results are identical
    /// to the brute force scan.
    pub fn with_accelerator(mut self) -> Self {
        self.index = Some(SampleGrid::build(&self.samples));
        self
    }

    pub fn samples(&self) -> &[Vector2<f64>] {
        &self.samples
    }

    pub fn normals(&self) -> &[Vector2<f64>] {
        &self.normals
    }

    pub fn params(&self) -> &[(usize, f64)] {
        &self.params
    }

    pub fn samples_per_curve(&self) -> usize {
        self.samples_per_curve
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn distance_mode(&self) -> DistanceMode {
        self.mode
    }

    pub fn has_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    /// Number of fitting variables behind the recorded Jacobian.
    pub fn n_vars(&self) -> usize {
        self.jacobian.as_ref().map_or(0, |j| j.n_vars)
    }

    /// Nearest sample, lowest index on ties.
    pub fn nearest_sample(&self, p: Vector2<f64>) -> usize {
        match &self.index {
            Some(grid) => grid.nearest(&self.samples, p),
            None => nearest_brute(&self.samples, p),
        }
    }

    pub fn signed_distance(&self, p: Vector2<f64>) -> SdfQuery {
        let j = self.nearest_sample(p);
        let m = self.samples.len();
        let edge = match self.mode {
            DistanceMode::Samples => (j, j, 0.0, false),
            DistanceMode::Segments => {
                let a = self.project((j + m - 1) % m, j, p);
                let b = self.project(j, (j + 1) % m, p);
                if b.1 < a.1 {
                    b.0
                } else {
                    a.0
                }
            }
        };
        let (ia, ib, tau, _) = edge;
        let c = self.samples[ia] + tau * (self.samples[ib] - self.samples[ia]);
        let d = c - p;
        let df = d.norm();
        let dot = self.normals[j].dot(&d);
        let sign = dot / (dot.abs() + SIGN_EPS);
        SdfQuery {
            sdf: sign * df,
            sample: j,
            closest_param: self.params[j],
            closest_point: c,
            edge,
        }
    }

    /// Closest point on edge `a → b`: `((a, b, τ, τ interior), squared distance)`.
    fn project(&self, a: usize, b: usize, p: Vector2<f64>) -> ((usize, usize, f64, bool), f64) {
        let sa = self.samples[a];
        let e = self.samples[b] - sa;
        let ee = e.norm_squared();
        let (tau, free) = if ee > 0.0 {
            let raw = (p - sa).dot(&e) / ee;
            if raw <= 0.0 {
                (0.0, false)
            } else if raw >= 1.0 {
                (1.0, false)
            } else {
                (raw, true)
            }
        } else {
            (0.0, false)
        };
        let c = sa + tau * e;
        ((a, b, tau, free), (c - p).norm_squared())
    }

    /// Signed distance together with its partials with respect to the query
    /// point, the edge samples and the nearest sample's normal. The argmin is
    /// held fixed.
    pub fn signed_distance_partials(&self, p: Vector2<f64>) -> (SdfQuery, SdfPartials) {
        let q = self.signed_distance(p);
        let (ia, ib, tau, free) = q.edge;
        let sa = self.samples[ia];
        let e = self.samples[ib] - sa;
        let nrm = self.normals[q.sample];
        let d = q.closest_point - p;
        let df = d.norm();
        let dot = nrm.dot(&d);
        let den = dot.abs() + SIGN_EPS;
        let sign = dot / den;
        let dsign = SIGN_EPS / (den * den);
        let u = if df > 0.0 { d / df } else { Vector2::zeros() };

        // adjoint of d = c - p
        let gd = sign * u + df * dsign * nrm;
        let gn = df * dsign * d;
        let mut gq = -gd;
        let mut ga = (1.0 - tau) * gd;
        let mut gb = tau * gd;
        if free {
            let ee = e.norm_squared();
            let r = p - sa;
            let gtau = gd.dot(&e);
            gq += gtau * e / ee;
            gb += gtau * (r - 2.0 * tau * e) / ee;
            ga += gtau * (-e - r + 2.0 * tau * e) / ee;
        }
        let partials = SdfPartials {
            query: gq,
            points: [(ia, ga), (ib, gb)],
            normal: (q.sample, gn),
        };
        (q, partials)
    }

    /// Chains per-sample adjoints through the recorded Jacobian.
    ///
    /// # Panics
    /// If the sketch was sampled without a Jacobian.
    pub fn pullback(&self, adj: &SampleAdjoint) -> Vec<f64> {
        let jac = self.jacobian.as_ref().expect("sampled without jacobian");
        let nv = jac.n_vars;
        let mut out = vec![0.0; nv];
        for s in 0..self.samples.len() {
            let gp = adj.point[s];
            let gn = adj.normal[s];
            if gp == Vector2::zeros() && gn == Vector2::zeros() {
                continue;
            }
            let rp = &jac.point[s * 2 * nv..(s + 1) * 2 * nv];
            let rn = &jac.normal[s * 2 * nv..(s + 1) * 2 * nv];
            for c in 0..nv {
                out[c] += gp.x * rp[c] + gp.y * rp[nv + c] + gn.x * rn[c] + gn.y * rn[nv + c];
            }
        }
        out
    }

    /// Gradient of the sdf at `p` with respect to the query point.
    pub fn gradient_wrt_query(&self, p: Vector2<f64>) -> Vector2<f64> {
        self.signed_distance_partials(p).1.query
    }

    /// Gradient of the sdf at `p` with respect to the sketch's unconstrained
    /// variables.
    pub fn gradient_wrt_params(&self, p: Vector2<f64>) -> Vec<f64> {
        let (_, partials) = self.signed_distance_partials(p);
        let mut adj = SampleAdjoint::zeros(self.len());
        adj.add(&partials, 1.0);
        self.pullback(&adj)
    }

    pub fn signed_distance_batch(&self, points: &[Vector2<f64>]) -> Vec<f64> {
        points
            .par_iter()
            .map(|p| self.signed_distance(*p).sdf)
            .collect()
    }

    /// Evaluates the sdf at every node of a 2D field's layout.
    pub fn sample_field(&self, layout: Layout) -> Result<ScalarField> {
        match layout {
            Layout::Grid(grid) => {
                let values = self.signed_distance_batch(&grid.points2());
                ScalarField::on_grid(grid, values)
            }
            Layout::List(_) => Err(invalid("a point list layout needs explicit points")),
        }
    }
}

/// Zero-length normals fall back to the average of their neighbours.
fn patch_zero_normals(normals: &mut [Vector2<f64>]) {
    let m = normals.len();
    let zero: Vec<usize> = (0..m).filter(|&i| normals[i] == Vector2::zeros()).collect();
    for i in zero {
        let avg = normals[(i + m - 1) % m] + normals[(i + 1) % m];
        let len = avg.norm();
        if len > 0.0 {
            normals[i] = avg / len;
        }
    }
}

pub fn signed_distance(sketch: &SampledSketch, p: Vector2<f64>) -> SdfQuery {
    sketch.signed_distance(p)
}

pub fn signed_distance_batch(sketch: &SampledSketch, points: &[Vector2<f64>]) -> ScalarField {
    ScalarField::list(sketch.signed_distance_batch(points))
}

#[inline]
fn dist2(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    dx * dx + dy * dy
}

fn nearest_brute(samples: &[Vector2<f64>], p: Vector2<f64>) -> usize {
    let mut best = f64::INFINITY;
    let mut arg = 0;
    for (i, s) in samples.iter().enumerate() {
        let d = dist2(*s, p);
        if d < best {
            best = d;
            arg = i;
        }
    }
    arg
}

/// Uniform bucket grid over the samples for ring-by-ring nearest search.
#[derive(Clone, Debug)]
struct SampleGrid {
    origin: Vector2<f64>,
    cell: f64,
    nx: usize,
    ny: usize,
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl SampleGrid {
    fn build(samples: &[Vector2<f64>]) -> Self {
        let mut lo = Vector2::repeat(f64::INFINITY);
        let mut hi = Vector2::repeat(f64::NEG_INFINITY);
        for s in samples {
            lo = lo.inf(s);
            hi = hi.sup(s);
        }
        let ext = (hi - lo).max().max(1e-12);
        let per_side = ((samples.len() as f64 / 2.0).sqrt().ceil() as usize).max(1);
        let cell = ext / per_side as f64;
        let nx = (((hi.x - lo.x) / cell).floor() as usize + 1).max(1);
        let ny = (((hi.y - lo.y) / cell).floor() as usize + 1).max(1);
        let cell_of = |s: &Vector2<f64>| {
            let i = (((s.x - lo.x) / cell).floor() as usize).min(nx - 1);
            let j = (((s.y - lo.y) / cell).floor() as usize).min(ny - 1);
            j * nx + i
        };
        let mut counts = vec![0usize; nx * ny + 1];
        for s in samples {
            counts[cell_of(s) + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let mut fill = counts.clone();
        let mut items = vec![0; samples.len()];
        for (idx, s) in samples.iter().enumerate() {
            let c = cell_of(s);
            items[fill[c]] = idx;
            fill[c] += 1;
        }
        Self {
            origin: lo,
            cell,
            nx,
            ny,
            starts: counts,
            items,
        }
    }

    fn nearest(&self, samples: &[Vector2<f64>], p: Vector2<f64>) -> usize {
        let rel = (p - self.origin) / self.cell;
        let ci = (rel.x.floor().max(0.0) as usize).min(self.nx - 1) as isize;
        let cj = (rel.y.floor().max(0.0) as usize).min(self.ny - 1) as isize;
        let mut best = f64::INFINITY;
        let mut arg = usize::MAX;
        let margin = 1e-9 * self.cell;
        let mut r: isize = 0;
        loop {
            let (i0, i1, j0, j1) = (ci - r, ci + r, cj - r, cj + r);
            for j in j0.max(0)..=j1.min(self.ny as isize - 1) {
                let edge_row = j == j0 || j == j1;
                let mut i = i0.max(0);
                while i <= i1.min(self.nx as isize - 1) {
                    let c = j as usize * self.nx + i as usize;
                    for &idx in &self.items[self.starts[c]..self.starts[c + 1]] {
                        let d = dist2(samples[idx], p);
                        if d < best || (d == best && idx < arg) {
                            best = d;
                            arg = idx;
                        }
                    }
                    // interior rows only need the two ring columns
                    if edge_row || i == i1 {
                        i += 1;
                    } else {
                        i = i1;
                    }
                }
            }
            // lower bound on the distance to any cell outside the ring block
            let mut bound = f64::INFINITY;
            let left = self.origin.x + i0 as f64 * self.cell;
            let right = self.origin.x + (i1 + 1) as f64 * self.cell;
            let bottom = self.origin.y + j0 as f64 * self.cell;
            let top = self.origin.y + (j1 + 1) as f64 * self.cell;
            if i0 > 0 {
                bound = bound.min(p.x - left);
            }
            if i1 < self.nx as isize - 1 {
                bound = bound.min(right - p.x);
            }
            if j0 > 0 {
                bound = bound.min(p.y - bottom);
            }
            if j1 < self.ny as isize - 1 {
                bound = bound.min(top - p.y);
            }
            if bound == f64::INFINITY {
                return arg;
            }
            let bound = (bound - margin).max(0.0);
            if arg != usize::MAX && bound * bound > best {
                return arg;
            }
            r += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn circle(n: usize) -> SampledSketch {
        sample_sketch(&SketchParams::circle(4, 1.0, 0.0).unwrap(), n).unwrap()
    }

    #[test]
    fn sample_layout() {
        let s = circle(100);
        assert_eq!(s.len(), 400);
        for (i, (k, t)) in s.params().iter().enumerate() {
            assert_eq!(*k, i / 100);
            assert_eq!(*t, (i % 100) as f64 / 100.0);
        }
        for (p, n) in s.samples().iter().zip(s.normals()) {
            assert!((n.norm() - 1.0).abs() < 1e-12);
            assert!(n.dot(&p.normalize()) >= 1.0 - 1e-6);
        }
        assert!(sample_sketch(&SketchParams::circle(4, 1.0, 0.0).unwrap(), 3).is_err());
    }

    #[test]
    fn square_corner_normal_is_diagonal() {
        let s = sample_sketch(&SketchParams::square(1.0).unwrap(), 10).unwrap();
        // sample 0 is the corner at 45°
        let n = s.normals()[0];
        let diag = Vector2::new(1.0, 1.0).normalize();
        assert!((n - diag).norm() < 1e-12);
        assert!((s.samples()[0] - Vector2::new(1.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn circle_center_and_outside() {
        let s = circle(400);
        assert!((s.signed_distance(Vector2::zeros()).sdf - 1.0).abs() < 1e-4);
        assert!((s.signed_distance(Vector2::new(2.0, 0.0)).sdf + 1.0).abs() < 1e-4);
        let on = s.samples()[37];
        assert_eq!(s.signed_distance(on).sdf, 0.0);
    }

    #[test]
    fn literal_sample_distance_mode() {
        let s = circle(400).with_distance_mode(DistanceMode::Samples);
        let q = s.signed_distance(Vector2::new(0.3, 0.2));
        assert_eq!(q.closest_point, s.samples()[q.sample]);
        assert!((q.sdf - (1.0 - Vector2::<f64>::new(0.3, 0.2).norm())).abs() < 1e-4);
    }

    #[test]
    fn batch_matches_analytic_grid() {
        let s = circle(400);
        let grid = Grid::square(61, -1.5, 1.5).unwrap();
        let pts = grid.points2();
        let f = signed_distance_batch(&s, &pts);
        let err = pts
            .iter()
            .zip(&f.values)
            .map(|(p, v)| (v - (1.0 - p.norm())).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-4, "max error {err}");
        assert!(signed_distance_batch(&s, &[]).is_empty());
        let dup = signed_distance_batch(&s, &[pts[5], pts[5]]);
        assert_eq!(dup.values[0], dup.values[1]);
    }

    #[test]
    fn ellipse_sign_and_distance() {
        let e = Ellipse {
            center: Vector2::new(0.5, -0.2),
            radii: Vector2::new(2.0, 1.0),
        };
        let s = SampledSketch::from_curve(&e, 800).unwrap();
        assert!((s.signed_distance(e.center).sdf - 1.0).abs() < 1e-4);
        assert!((s.signed_distance(Vector2::new(3.5, -0.2)).sdf + 1.0).abs() < 1e-4);
    }

    #[test]
    fn query_gradient_on_circle() {
        let s = circle(400);
        let g = s.gradient_wrt_query(Vector2::new(0.5, 0.0));
        assert!((g - Vector2::new(-1.0, 0.0)).norm() < 5e-3, "{g:?}");
        let g = s.gradient_wrt_query(Vector2::new(1.3, 0.4));
        assert!((g.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn query_gradient_matches_finite_differences() {
        let s = sample_sketch(&SketchParams::regular_polygon(5, 1.2, 0.3).unwrap(), 40).unwrap();
        let h = 1e-6;
        for p in [
            Vector2::new(0.2, 0.1),
            Vector2::new(-1.7, 0.4),
            Vector2::new(0.3, -1.01),
        ] {
            let g = s.gradient_wrt_query(p);
            let fx = (s.signed_distance(p + Vector2::x() * h).sdf
                - s.signed_distance(p - Vector2::x() * h).sdf)
                / (2.0 * h);
            let fy = (s.signed_distance(p + Vector2::y() * h).sdf
                - s.signed_distance(p - Vector2::y() * h).sdf)
                / (2.0 * h);
            assert!(
                (g - Vector2::new(fx, fy)).norm() < 1e-6,
                "{p:?}: {g:?} vs ({fx}, {fy})"
            );
            // eikonal property away from the medial axis
            assert!((g.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn accelerator_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..20 {
            let n = 4 + trial;
            let u: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p = SketchParams::from_unconstrained(4, crate::sketch::Continuity::C0, 0.0, &u)
                .unwrap();
            let brute = sample_sketch(&p, n).unwrap();
            let fast = brute.clone().with_accelerator();
            for _ in 0..500 {
                let q = Vector2::new(rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0));
                assert_eq!(brute.nearest_sample(q), fast.nearest_sample(q));
            }
            // exact sample positions and far-away points
            for s in brute.samples() {
                assert_eq!(brute.nearest_sample(*s), fast.nearest_sample(*s));
            }
            let far = Vector2::new(1e3, -2e3);
            assert_eq!(brute.nearest_sample(far), fast.nearest_sample(far));
        }
        // ties resolve to the lowest index in both paths
        let pts = vec![
            Vector2::new(1.0, 0.0),
            Vector2::new(-1.0, 0.0),
            Vector2::new(0.0, 5.0),
        ];
        let grid = SampleGrid::build(&pts);
        assert_eq!(grid.nearest(&pts, Vector2::zeros()), 0);
        assert_eq!(nearest_brute(&pts, Vector2::zeros()), 0);
    }

    fn sdf_at(u: &[f64], mode: crate::sketch::Continuity, p: Vector2<f64>) -> f64 {
        let params = SketchParams::from_unconstrained(4, mode, 0.0, u).unwrap();
        sample_sketch(&params, 50).unwrap().signed_distance(p).sdf
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        use crate::sketch::Continuity;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 40 {
            let mode = if checked % 2 == 0 {
                Continuity::C0
            } else {
                Continuity::C1
            };
            let u: Vec<f64> = (0..mode.free_count(4))
                .map(|_| rng.gen_range(-0.4..0.4))
                .collect();
            let p = Vector2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let params = SketchParams::from_unconstrained(4, mode, 0.0, &u).unwrap();
            let s = SampledSketch::with_jacobian(&params, 50).unwrap();
            let q = s.signed_distance(p);
            // skip queries near a switch of the nearest sample
            let mut dists: Vec<f64> = s.samples().iter().map(|x| (x - p).norm()).collect();
            dists.sort_by(f64::total_cmp);
            if dists[1] - dists[0] < 1e-3 || q.sdf.abs() < 1e-3 {
                continue;
            }
            let g = s.gradient_wrt_params(p);
            let h = 1e-5;
            for c in 0..u.len() {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[c] += h;
                dn[c] -= h;
                let fd = (sdf_at(&up, mode, p) - sdf_at(&dn, mode, p)) / (2.0 * h);
                let scale = fd.abs().max(g[c].abs()).max(1e-2);
                assert!(
                    (fd - g[c]).abs() / scale <= 1e-4,
                    "{mode:?} c={c} fd={fd} an={}",
                    g[c]
                );
            }
            checked += 1;
        }
    }
}
