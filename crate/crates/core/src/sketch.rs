//! Closed profile curves made of `N` rational cubic Bézier segments.
//!
//! Every control point is given in polar form around the sketch origin. The
//! polar angles are fixed by the segment count (see [`derive_angles`]), so a
//! sketch is fully described by its radial coordinates and the two inner
//! weights of each segment. Segment `k` spans the central angle
//! `[α₀ᵏ, α₀ᵏ + 2π/N]` and shares its last control point with the first
//! control point of segment `k + 1 (mod N)`.
//!
//! Two construction modes exist:
//!
//! * [`Continuity::C0`]: `3N` radii and `2N` weights are free.
//! * [`Continuity::C1`]: only the radii of `P₁`, `P₂` and the weight `w₂` of
//!   every segment are free. Joint points and the `w₁` weights are derived so
//!   that adjacent segments meet with matching first derivatives.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, Vector2};
use serde::{Deserialize, Serialize};

use crate::dual::{Dual, Scalar};
use crate::error::{invalid, Error, Result};

/// Segment count used when nothing else is requested.
pub const DEFAULT_CURVES: usize = 4;

/// Number of local control values of one segment:
/// `P₀ P₁ P₂ P₃` (x, y each) followed by `w₁ w₂`.
pub const LOCAL_DOF: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Continuity {
    #[default]
    C0,
    C1,
}

impl Continuity {
    pub fn radii_count(self, n_curves: usize) -> usize {
        match self {
            Continuity::C0 => 3 * n_curves,
            Continuity::C1 => 2 * n_curves,
        }
    }

    pub fn weight_count(self, n_curves: usize) -> usize {
        match self {
            Continuity::C0 => 2 * n_curves,
            Continuity::C1 => n_curves,
        }
    }

    /// Fitting variables exposed by one sketch in this mode.
    pub fn free_count(self, n_curves: usize) -> usize {
        self.radii_count(n_curves) + self.weight_count(n_curves)
    }
}

/// Angle offset of the inner control points from the segment end points.
pub fn inner_angle(n_curves: usize) -> f64 {
    let q = TAU / (4.0 * n_curves as f64);
    q + ((1.0 / 3.0) * q.tan()).atan()
}

/// Polar angles `(α₀, α₁, α₂, α₃)` of the control points of every segment.
pub fn derive_angles(n_curves: usize, start_angle: f64) -> Result<Vec<[f64; 4]>> {
    if n_curves < 2 {
        return Err(invalid(format!(
            "a sketch needs at least 2 curves, got {n_curves}"
        )));
    }
    let theta = inner_angle(n_curves);
    let step = TAU / n_curves as f64;
    Ok((0..n_curves)
        .map(|k| {
            let a0 = start_angle + k as f64 * step;
            let a3 = a0 + step;
            [a0, a0 + theta, a3 - theta, a3]
        })
        .collect())
}

fn unit(angle: f64) -> Vector2<f64> {
    Vector2::new(angle.cos(), angle.sin())
}

/// Radial coordinates and weights of one closed sketch.
///
/// Radii are ordered per segment: in C0 mode segment `k` owns
/// `radii[3k..3k+3]` for `P₀ P₁ P₂` and `weights[2k..2k+2]` for `w₁ w₂`; in
/// C1 mode it owns `radii[2k..2k+2]` for `P₁ P₂` and `weights[k]` for `w₂`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SketchRepr", into = "SketchRepr")]
pub struct SketchParams {
    n_curves: usize,
    mode: Continuity,
    radii: Vec<f64>,
    weights: Vec<f64>,
    start_angle: f64,
}

#[derive(Serialize, Deserialize)]
struct SketchRepr {
    n_curves: usize,
    mode: Continuity,
    radii: Vec<f64>,
    weights: Vec<f64>,
    #[serde(default)]
    start_angle: f64,
}

impl TryFrom<SketchRepr> for SketchParams {
    type Error = Error;

    fn try_from(r: SketchRepr) -> Result<Self> {
        SketchParams::new(r.n_curves, r.mode, r.radii, r.weights, r.start_angle)
    }
}

impl From<SketchParams> for SketchRepr {
    fn from(s: SketchParams) -> Self {
        SketchRepr {
            n_curves: s.n_curves,
            mode: s.mode,
            radii: s.radii,
            weights: s.weights,
            start_angle: s.start_angle,
        }
    }
}

impl SketchParams {
    pub fn new(
        n_curves: usize,
        mode: Continuity,
        radii: Vec<f64>,
        weights: Vec<f64>,
        start_angle: f64,
    ) -> Result<Self> {
        if n_curves < 2 {
            return Err(invalid(format!(
                "a sketch needs at least 2 curves, got {n_curves}"
            )));
        }
        if radii.len() != mode.radii_count(n_curves) {
            return Err(invalid(format!(
                "expected {} radii for {n_curves} curves in {mode:?} mode, got {}",
                mode.radii_count(n_curves),
                radii.len()
            )));
        }
        if weights.len() != mode.weight_count(n_curves) {
            return Err(invalid(format!(
                "expected {} weights for {n_curves} curves in {mode:?} mode, got {}",
                mode.weight_count(n_curves),
                weights.len()
            )));
        }
        if let Some(r) = radii.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(invalid(format!(
                "radii must be positive and finite, got {r}"
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(invalid(format!(
                "weights must be positive and finite, got {w}"
            )));
        }
        if !start_angle.is_finite() {
            return Err(invalid("start angle must be finite"));
        }
        Ok(Self {
            n_curves,
            mode,
            radii,
            weights,
            start_angle,
        })
    }

    /// All radii and weights equal to one: the image of the all-zero
    /// unconstrained vector.
    pub fn unit(n_curves: usize, mode: Continuity) -> Result<Self> {
        Self::new(
            n_curves,
            mode,
            vec![1.0; mode.radii_count(n_curves)],
            vec![1.0; mode.weight_count(n_curves)],
            0.0,
        )
    }

    /// The exact circle of the given radius.
    pub fn circle(n_curves: usize, radius: f64, start_angle: f64) -> Result<Self> {
        let inner = radius / inner_angle(n_curves).cos();
        let w = circle_weight(n_curves);
        let radii = (0..n_curves).flat_map(|_| [radius, inner, inner]).collect();
        Self::new(
            n_curves,
            Continuity::C0,
            radii,
            vec![w; 2 * n_curves],
            start_angle,
        )
    }

    /// The circle in C1 mode: joints and `w₁` are derived from the inner radii.
    pub fn circle_c1(n_curves: usize, radius: f64, start_angle: f64) -> Result<Self> {
        let inner = radius / inner_angle(n_curves).cos();
        let w = circle_weight(n_curves);
        Self::new(
            n_curves,
            Continuity::C1,
            vec![inner; 2 * n_curves],
            vec![w; n_curves],
            start_angle,
        )
    }

    /// A regular `N`-gon with corners at the segment joints. All control
    /// points of a segment lie on the chord between its two corners.
    pub fn regular_polygon(n_curves: usize, circumradius: f64, start_angle: f64) -> Result<Self> {
        let half = PI / n_curves as f64;
        let theta = inner_angle(n_curves);
        let inner = circumradius * half.cos() / (theta - half).cos();
        let radii = (0..n_curves)
            .flat_map(|_| [circumradius, inner, inner])
            .collect();
        Self::new(
            n_curves,
            Continuity::C0,
            radii,
            vec![1.0; 2 * n_curves],
            start_angle,
        )
    }

    /// Axis-aligned square with the given half side length.
    pub fn square(half_side: f64) -> Result<Self> {
        Self::regular_polygon(4, half_side * 2f64.sqrt(), PI / 4.0)
    }

    /// Inverse of [`Self::to_unconstrained`]: radii and weights are the
    /// exponentials of the given values.
    pub fn from_unconstrained(
        n_curves: usize,
        mode: Continuity,
        start_angle: f64,
        values: &[f64],
    ) -> Result<Self> {
        let nr = mode.radii_count(n_curves);
        if values.len() != mode.free_count(n_curves) {
            return Err(invalid(format!(
                "expected {} unconstrained values, got {}",
                mode.free_count(n_curves),
                values.len()
            )));
        }
        let radii = values[..nr].iter().map(|v| v.exp()).collect();
        let weights = values[nr..].iter().map(|v| v.exp()).collect();
        Self::new(n_curves, mode, radii, weights, start_angle)
    }

    /// Natural logarithms of radii followed by those of the weights.
    pub fn to_unconstrained(&self) -> Vec<f64> {
        self.radii
            .iter()
            .chain(self.weights.iter())
            .map(|v| v.ln())
            .collect()
    }

    pub fn n_curves(&self) -> usize {
        self.n_curves
    }

    pub fn mode(&self) -> Continuity {
        self.mode
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn start_angle(&self) -> f64 {
        self.start_angle
    }

    pub fn free_count(&self) -> usize {
        self.mode.free_count(self.n_curves)
    }

    pub fn polygon(&self) -> ControlPolygon {
        build_polygon(self)
    }

    /// `Σₖ Σᵢ (wᵢᵏ − 1)²` over both inner weights of every segment (derived
    /// `w₁` included in C1 mode), with its gradient in unconstrained
    /// variables.
    pub fn weight_penalty(&self) -> (f64, Vec<f64>) {
        let n = self.n_curves;
        let nr = self.mode.radii_count(n);
        let mut grad = vec![0.0; self.free_count()];
        let mut value = 0.0;
        match self.mode {
            Continuity::C0 => {
                for (i, &w) in self.weights.iter().enumerate() {
                    value += (w - 1.0) * (w - 1.0);
                    grad[nr + i] = 2.0 * (w - 1.0) * w;
                }
            }
            Continuity::C1 => {
                for k in 0..n {
                    let prev = (k + n - 1) % n;
                    let w2 = self.weights[k];
                    value += (w2 - 1.0) * (w2 - 1.0);
                    grad[nr + k] += 2.0 * (w2 - 1.0) * w2;
                    // w₁ᵏ = w₂ᵏ⁻¹ a / b, linear in each log variable
                    let w1 = self.weights[prev] * self.radii[2 * prev + 1] / self.radii[2 * k];
                    let g = 2.0 * (w1 - 1.0) * w1;
                    value += (w1 - 1.0) * (w1 - 1.0);
                    grad[nr + prev] += g;
                    grad[2 * prev + 1] += g;
                    grad[2 * k] -= g;
                }
            }
        }
        (value, grad)
    }
}

/// `w₁ = w₂ = (1 + 2 cos(π/N)) / 3`, the weights that turn a segment into an
/// exact circular arc.
pub fn circle_weight(n_curves: usize) -> f64 {
    (1.0 + 2.0 * (PI / n_curves as f64).cos()) / 3.0
}

/// Control points and weights of a sketch.
///
/// Only `P₀ P₁ P₂` of every segment are stored; `P₃ᵏ` is read from
/// `P₀` of the next segment, so the loop is closed by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlPolygon {
    points: Vec<Vector2<f64>>,
    weights: Vec<[f64; 2]>,
}

impl ControlPolygon {
    pub fn n_curves(&self) -> usize {
        self.weights.len()
    }

    /// `[P₀ P₁ P₂ P₀ P₁ P₂ ...]` in traversal order.
    pub fn points(&self) -> &[Vector2<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[[f64; 2]] {
        &self.weights
    }

    pub fn control_points(&self, k: usize) -> [Vector2<f64>; 4] {
        let n = self.n_curves();
        let next = ((k + 1) % n) * 3;
        [
            self.points[3 * k],
            self.points[3 * k + 1],
            self.points[3 * k + 2],
            self.points[next],
        ]
    }

    /// Point on segment `k` at `t`; `t` is not range checked.
    pub fn point(&self, k: usize, t: f64) -> Vector2<f64> {
        let (p, _) = self.eval_pair(k, t);
        p
    }

    /// First derivative of segment `k` at `t`.
    pub fn derivative(&self, k: usize, t: f64) -> Vector2<f64> {
        let (_, d) = self.eval_pair(k, t);
        d
    }

    fn eval_pair(&self, k: usize, t: f64) -> (Vector2<f64>, Vector2<f64>) {
        let cp = self.control_points(k);
        let pts = cp.map(|p| [p.x, p.y]);
        let [w1, w2] = self.weights[k];
        let (p, d) = rational_cubic(&pts, w1, w2, t);
        (Vector2::new(p[0], p[1]), Vector2::new(d[0], d[1]))
    }

    /// Point and derivative of segment `k` at `t` together with their
    /// partials with respect to the segment's local control values
    /// (see [`LOCAL_DOF`]).
    pub fn eval_local_dual(
        &self,
        k: usize,
        t: f64,
    ) -> ([Dual<LOCAL_DOF>; 2], [Dual<LOCAL_DOF>; 2]) {
        let cp = self.control_points(k);
        let mut pts = [[Dual::constant(0.0); 2]; 4];
        for (i, p) in cp.iter().enumerate() {
            pts[i] = [Dual::var(p.x, 2 * i), Dual::var(p.y, 2 * i + 1)];
        }
        let [w1, w2] = self.weights[k];
        rational_cubic(&pts, Dual::var(w1, 8), Dual::var(w2, 9), t)
    }
}

/// Evaluates a rational cubic with unit end weights and its first derivative.
pub(crate) fn rational_cubic<T: Scalar>(p: &[[T; 2]; 4], w1: T, w2: T, t: f64) -> ([T; 2], [T; 2]) {
    let s = 1.0 - t;
    let b = [s * s * s, 3.0 * s * s * t, 3.0 * s * t * t, t * t * t];
    let db = [
        -3.0 * s * s,
        3.0 * s * s - 6.0 * s * t,
        6.0 * s * t - 3.0 * t * t,
        3.0 * t * t,
    ];
    let c = [T::cst(1.0), w1, w2, T::cst(1.0)];

    let mut den = T::cst(0.0);
    let mut dden = T::cst(0.0);
    let mut num = [T::cst(0.0); 2];
    let mut dnum = [T::cst(0.0); 2];
    for i in 0..4 {
        let cb = c[i].scale(b[i]);
        let cdb = c[i].scale(db[i]);
        den = den + cb;
        dden = dden + cdb;
        for a in 0..2 {
            num[a] = num[a] + cb * p[i][a];
            dnum[a] = dnum[a] + cdb * p[i][a];
        }
    }
    let point = [num[0] / den, num[1] / den];
    let deriv = [
        (dnum[0] - point[0] * dden) / den,
        (dnum[1] - point[1] * dden) / den,
    ];
    (point, deriv)
}

pub fn build_polygon(params: &SketchParams) -> ControlPolygon {
    let n = params.n_curves;
    let angles = derive_angles(n, params.start_angle).expect("validated curve count");
    let mut points = vec![Vector2::zeros(); 3 * n];
    let mut weights = vec![[0.0; 2]; n];
    match params.mode {
        Continuity::C0 => {
            for k in 0..n {
                for i in 0..3 {
                    points[3 * k + i] = params.radii[3 * k + i] * unit(angles[k][i]);
                }
                weights[k] = [params.weights[2 * k], params.weights[2 * k + 1]];
            }
        }
        Continuity::C1 => {
            for k in 0..n {
                points[3 * k + 1] = params.radii[2 * k] * unit(angles[k][1]);
                points[3 * k + 2] = params.radii[2 * k + 1] * unit(angles[k][2]);
            }
            for k in 0..n {
                let prev = (k + n - 1) % n;
                let a = params.radii[2 * prev + 1];
                let b = params.radii[2 * k];
                points[3 * k] = (a * points[3 * k + 1] + b * points[3 * prev + 2]) / (a + b);
                weights[k] = [params.weights[prev] * a / b, params.weights[k]];
            }
        }
    }
    ControlPolygon { points, weights }
}

/// Partials of every segment's local control values with respect to the
/// sketch's unconstrained variables (log radii, then log weights).
///
/// Entry `k` is a `LOCAL_DOF × free_count` matrix.
pub fn local_jacobians(params: &SketchParams) -> Vec<DMatrix<f64>> {
    let n = params.n_curves;
    let nf = params.free_count();
    let poly = build_polygon(params);
    let angles = derive_angles(n, params.start_angle).expect("validated curve count");
    let mut out = vec![DMatrix::zeros(LOCAL_DOF, nf); n];

    // column sensitivity of the joint point P₀ᵏ (shared with P₃ᵏ⁻¹)
    let mut joint: Vec<Vec<(usize, Vector2<f64>)>> = vec![Vec::new(); n];
    // sensitivities of (w₁ᵏ, w₂ᵏ)
    let mut wsens: Vec<[Vec<(usize, f64)>; 2]> = vec![[Vec::new(), Vec::new()]; n];
    let mut inner: Vec<[(usize, Vector2<f64>); 2]> = Vec::with_capacity(n);

    match params.mode {
        Continuity::C0 => {
            let nr = 3 * n;
            for k in 0..n {
                joint[k].push((3 * k, poly.points[3 * k]));
                inner.push([
                    (3 * k + 1, poly.points[3 * k + 1]),
                    (3 * k + 2, poly.points[3 * k + 2]),
                ]);
                let [w1, w2] = poly.weights[k];
                wsens[k] = [vec![(nr + 2 * k, w1)], vec![(nr + 2 * k + 1, w2)]];
            }
        }
        Continuity::C1 => {
            let nr = 2 * n;
            for k in 0..n {
                inner.push([
                    (2 * k, poly.points[3 * k + 1]),
                    (2 * k + 1, poly.points[3 * k + 2]),
                ]);
            }
            for k in 0..n {
                let prev = (k + n - 1) % n;
                let a = params.radii[2 * prev + 1];
                let b = params.radii[2 * k];
                // P₀ᵏ = ab (d₁ᵏ + d₂ᵏ⁻¹) / (a + b)
                let dirs = unit(angles[k][1]) + unit(angles[prev][2]);
                let s = (a + b) * (a + b);
                joint[k].push((2 * prev + 1, a * b * b / s * dirs));
                joint[k].push((2 * k, b * a * a / s * dirs));
                let w1 = poly.weights[k][0];
                wsens[k][0] = vec![(nr + prev, w1), (2 * prev + 1, w1), (2 * k, -w1)];
                wsens[k][1] = vec![(nr + k, poly.weights[k][1])];
            }
        }
    }

    for k in 0..n {
        let m = &mut out[k];
        let next = (k + 1) % n;
        for &(col, v) in &joint[k] {
            m[(0, col)] += v.x;
            m[(1, col)] += v.y;
        }
        for (i, &(col, v)) in inner[k].iter().enumerate() {
            m[(2 + 2 * i, col)] += v.x;
            m[(3 + 2 * i, col)] += v.y;
        }
        for &(col, v) in &joint[next] {
            m[(6, col)] += v.x;
            m[(7, col)] += v.y;
        }
        for (i, sens) in wsens[k].iter().enumerate() {
            for &(col, v) in sens {
                m[(8 + i, col)] += v;
            }
        }
    }
    out
}

fn check_eval_args(params: &SketchParams, k: usize, t: f64) -> Result<()> {
    if k >= params.n_curves {
        return Err(Error::Domain(format!(
            "curve index {k} out of range 0..{}",
            params.n_curves
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("curve parameter {t} outside [0, 1]")));
    }
    Ok(())
}

pub fn eval_curve(params: &SketchParams, k: usize, t: f64) -> Result<Vector2<f64>> {
    check_eval_args(params, k, t)?;
    let poly = build_polygon(params);
    // exact end point interpolation regardless of rounding in the rational form
    Ok(if t == 0.0 {
        poly.points[3 * k]
    } else if t == 1.0 {
        poly.points[3 * ((k + 1) % params.n_curves)]
    } else {
        poly.point(k, t)
    })
}

pub fn eval_derivative(params: &SketchParams, k: usize, t: f64) -> Result<Vector2<f64>> {
    check_eval_args(params, k, t)?;
    Ok(build_polygon(params).derivative(k, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn weight_penalty_values_and_gradient() {
        assert_eq!(
            SketchParams::unit(4, Continuity::C0)
                .unwrap()
                .weight_penalty()
                .0,
            0.0
        );
        let c = SketchParams::circle(4, 1.0, 0.0).unwrap();
        assert_relative_eq!(
            c.weight_penalty().0,
            8.0 * (circle_weight(4) - 1.0).powi(2),
            epsilon = 1e-12
        );
        assert_relative_eq!(c.weight_penalty().0, 0.305, epsilon = 1e-3);
        let mut w = vec![1.0; 8];
        w[3] = 2.0;
        let one = SketchParams::new(4, Continuity::C0, vec![1.0; 12], w, 0.0).unwrap();
        assert_eq!(one.weight_penalty().0, 1.0);
        for mode in [Continuity::C0, Continuity::C1] {
            let x: Vec<f64> = (0..mode.free_count(5))
                .map(|i| 0.3 * ((i * 7 % 11) as f64 / 11.0 - 0.5))
                .collect();
            let p = SketchParams::from_unconstrained(5, mode, 0.2, &x).unwrap();
            let (_, g) = p.weight_penalty();
            for i in 0..x.len() {
                let f = |d: f64| {
                    let mut y = x.clone();
                    y[i] += d;
                    SketchParams::from_unconstrained(5, mode, 0.2, &y)
                        .unwrap()
                        .weight_penalty()
                        .0
                };
                let fd = (f(1e-6) - f(-1e-6)) / 2e-6;
                assert!(
                    (fd - g[i]).abs() < 1e-7,
                    "{mode:?} var {i}: {fd} vs {}",
                    g[i]
                );
            }
        }
    }

    #[test]
    fn angles_for_four_curves() {
        let a = derive_angles(4, 0.0).unwrap();
        assert_relative_eq!(inner_angle(4), 0.529902, epsilon = 1e-6);
        assert_relative_eq!(a[0][0], 0.0);
        assert_relative_eq!(a[0][1], 0.529902, epsilon = 1e-6);
        assert_relative_eq!(a[0][2], 1.040894, epsilon = 1e-6);
        assert_relative_eq!(a[0][3], TAU / 4.0, epsilon = 1e-15);
        assert_relative_eq!(a[3][3], TAU, epsilon = 1e-15);
    }

    #[test]
    fn angles_spacing() {
        assert_relative_eq!(derive_angles(2, 0.0).unwrap()[0][3], PI);
        let a = derive_angles(8, PI / 8.0).unwrap();
        assert_relative_eq!(a[0][0], PI / 8.0);
        assert_relative_eq!(a[1][0], PI / 8.0 + PI / 4.0, epsilon = 1e-15);
        assert!(matches!(
            derive_angles(1, 0.0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn rejects_bad_params() {
        assert!(SketchParams::new(4, Continuity::C0, vec![1.0; 12], vec![1.0; 7], 0.0).is_err());
        let mut r = vec![1.0; 12];
        r[3] = 0.0;
        assert!(SketchParams::new(4, Continuity::C0, r, vec![1.0; 8], 0.0).is_err());
        assert!(SketchParams::new(4, Continuity::C0, vec![1.0; 12], vec![-1.0; 8], 0.0).is_err());
        assert!(SketchParams::new(3, Continuity::C1, vec![1.0; 6], vec![1.0; 3], 0.0).is_ok());
    }

    #[test]
    fn circle_recipe_polygon() {
        let p = SketchParams::circle(4, 1.0, 0.0).unwrap();
        let poly = p.polygon();
        assert_relative_eq!(poly.points()[0], Vector2::new(1.0, 0.0));
        assert_relative_eq!(poly.points()[1].norm(), 1.158941, epsilon = 1e-6);
        assert_relative_eq!(circle_weight(4), 0.804738, epsilon = 1e-6);
    }

    #[test]
    fn circle_radius_is_exact() {
        for n in [3, 4, 6, 8] {
            let p = SketchParams::circle(n, 2.5, 0.3).unwrap();
            let poly = p.polygon();
            for k in 0..n {
                for i in 0..=100 {
                    let t = i as f64 / 100.0;
                    let r = poly.point(k, t).norm();
                    assert!((r - 2.5).abs() <= 1e-9 * 2.5, "n={n} k={k} t={t} r={r}");
                }
            }
        }
    }

    #[test]
    fn endpoints_interpolate() {
        let p = SketchParams::new(
            3,
            Continuity::C0,
            vec![1.0, 2.0, 0.5, 1.5, 0.7, 1.1, 0.9, 1.3, 0.6],
            vec![0.5, 2.0, 1.0, 1.5, 0.3, 0.8],
            0.1,
        )
        .unwrap();
        let poly = p.polygon();
        for k in 0..3 {
            let cp = poly.control_points(k);
            assert_eq!(eval_curve(&p, k, 0.0).unwrap(), cp[0]);
            assert_eq!(eval_curve(&p, k, 1.0).unwrap(), cp[3]);
            assert_eq!(cp[3], poly.control_points((k + 1) % 3)[0]);
        }
        assert!(matches!(eval_curve(&p, 0, 1.5), Err(Error::Domain(_))));
        assert!(matches!(eval_curve(&p, 3, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn collinear_segment_stays_on_line() {
        let p = SketchParams::regular_polygon(5, 1.3, 0.0).unwrap();
        let poly = p.polygon();
        for k in 0..5 {
            let cp = poly.control_points(k);
            let dir = (cp[3] - cp[0]).normalize();
            let nrm = Vector2::new(-dir.y, dir.x);
            for i in 0..=20 {
                let q = poly.point(k, i as f64 / 20.0);
                assert!((q - cp[0]).dot(&nrm).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn end_derivatives_closed_form() {
        let p = SketchParams::new(
            3,
            Continuity::C0,
            vec![1.0, 2.0, 0.5, 1.5, 0.7, 1.1, 0.9, 1.3, 0.6],
            vec![0.5, 2.0, 1.0, 1.5, 0.3, 0.8],
            0.0,
        )
        .unwrap();
        let poly = p.polygon();
        for k in 0..3 {
            let cp = poly.control_points(k);
            let [w1, w2] = poly.weights()[k];
            let d1 = eval_derivative(&p, k, 1.0).unwrap();
            let d0 = eval_derivative(&p, k, 0.0).unwrap();
            assert_relative_eq!(d1, 3.0 * w2 * (cp[3] - cp[2]), epsilon = 1e-12);
            assert_relative_eq!(d0, 3.0 * w1 * (cp[1] - cp[0]), epsilon = 1e-12);
        }
    }

    #[test]
    fn circle_derivative_is_tangent() {
        let poly = SketchParams::circle(4, 1.0, 0.0).unwrap().polygon();
        for i in 0..=10 {
            let t = i as f64 / 10.0;
            let c = poly.point(1, t);
            let d = poly.derivative(1, t);
            assert!(c.dot(&d).abs() < 1e-12 * d.norm());
        }
    }

    #[test]
    fn c1_symmetric_joints() {
        let r = 1.4;
        let p = SketchParams::new(5, Continuity::C1, vec![r; 10], vec![0.9; 5], 0.0).unwrap();
        let poly = p.polygon();
        let a = derive_angles(5, 0.0).unwrap();
        let expected = r * inner_angle(5).cos();
        for k in 0..5 {
            let j = poly.points()[3 * k];
            assert_relative_eq!(j.norm(), expected, epsilon = 1e-12);
            let ang = j.y.atan2(j.x).rem_euclid(TAU);
            assert_relative_eq!(ang, a[k][0].rem_euclid(TAU), epsilon = 1e-12);
            assert_relative_eq!(poly.weights()[k][0], 0.9, epsilon = 1e-12);
        }
    }

    #[test]
    fn c1_circle_matches_c0_circle() {
        let a = SketchParams::circle(6, 1.0, 0.2).unwrap().polygon();
        let b = SketchParams::circle_c1(6, 1.0, 0.2).unwrap().polygon();
        for (p, q) in a.points().iter().zip(b.points()) {
            assert_relative_eq!(p, q, epsilon = 1e-12);
        }
    }

    #[test]
    fn c1_derivative_matches_finite_differences() {
        let p = SketchParams::new(
            3,
            Continuity::C1,
            vec![1.0, 2.0, 0.5, 1.5, 0.7, 1.1],
            vec![0.5, 2.0, 1.3],
            0.0,
        )
        .unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let next = (k + 1) % 3;
            let end = eval_derivative(&p, k, 1.0).unwrap();
            let start = eval_derivative(&p, next, 0.0).unwrap();
            assert!((end - start).norm() / end.norm().max(1.0) <= 1e-9);
            let fd = (eval_curve(&p, k, 0.5 + h).unwrap() - eval_curve(&p, k, 0.5 - h).unwrap())
                / (2.0 * h);
            assert_relative_eq!(fd, eval_derivative(&p, k, 0.5).unwrap(), epsilon = 1e-6);
        }
    }

    #[test]
    fn degrees_of_freedom() {
        for n in 2..9 {
            assert_eq!(
                SketchParams::unit(n, Continuity::C0).unwrap().free_count(),
                5 * n
            );
            assert_eq!(
                SketchParams::unit(n, Continuity::C1).unwrap().free_count(),
                3 * n
            );
        }
    }

    fn local_values(poly: &ControlPolygon, k: usize) -> [f64; LOCAL_DOF] {
        let cp = poly.control_points(k);
        let w = poly.weights()[k];
        [
            cp[0].x, cp[0].y, cp[1].x, cp[1].y, cp[2].x, cp[2].y, cp[3].x, cp[3].y, w[0], w[1],
        ]
    }

    #[test]
    fn local_jacobian_matches_finite_differences() {
        for mode in [Continuity::C0, Continuity::C1] {
            let n = 3;
            let nf = mode.free_count(n);
            let u: Vec<f64> = (0..nf).map(|i| 0.3 * ((i as f64) * 1.7).sin()).collect();
            let p = SketchParams::from_unconstrained(n, mode, 0.2, &u).unwrap();
            let jac = local_jacobians(&p);
            let h = 1e-6;
            for col in 0..nf {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[col] += h;
                dn[col] -= h;
                let pu = SketchParams::from_unconstrained(n, mode, 0.2, &up)
                    .unwrap()
                    .polygon();
                let pd = SketchParams::from_unconstrained(n, mode, 0.2, &dn)
                    .unwrap()
                    .polygon();
                for k in 0..n {
                    let a = local_values(&pu, k);
                    let b = local_values(&pd, k);
                    for r in 0..LOCAL_DOF {
                        let fd = (a[r] - b[r]) / (2.0 * h);
                        assert!(
                            (fd - jac[k][(r, col)]).abs() < 1e-7,
                            "{mode:?} k={k} r={r} col={col}: fd={fd} an={}",
                            jac[k][(r, col)]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn serde_round_trip() {
        let p = SketchParams::circle(4, 1.0, 0.0).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let q: SketchParams = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        let bad = s.replace("\"n_curves\":4", "\"n_curves\":1");
        assert!(serde_json::from_str::<SketchParams>(&bad).is_err());
    }

    fn arb_sketch() -> impl Strategy<Value = SketchParams> {
        (2usize..9, prop::bool::ANY).prop_flat_map(|(n, c1)| {
            let mode = if c1 { Continuity::C1 } else { Continuity::C0 };
            prop::collection::vec(-1.5f64..1.5, mode.free_count(n))
                .prop_map(move |u| SketchParams::from_unconstrained(n, mode, 0.0, &u).unwrap())
        })
    }

    proptest! {
        #[test]
        fn polygon_polar_angle_is_monotone(p in arb_sketch()) {
            let poly = p.polygon();
            let pts = poly.points();
            let mut total = 0.0;
            for i in 0..pts.len() {
                let a = pts[i];
                let b = pts[(i + 1) % pts.len()];
                let step = a.perp(&b).atan2(a.dot(&b));
                prop_assert!(step > 0.0);
                total += step;
            }
            prop_assert!((total - TAU).abs() < 1e-9);
        }

        #[test]
        fn curve_is_closed(p in arb_sketch()) {
            let poly = p.polygon();
            let n = p.n_curves();
            prop_assert_eq!(poly.point(n - 1, 1.0), poly.point(0, 0.0));
        }
    }
}
