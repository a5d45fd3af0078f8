//! Posed extrusions of sketches and their 3D signed distance and occupancy.
//!
//! In its local frame an extrusion spans `z ∈ [0, h]` over the sketch region.
//! A world point is mapped into the local frame by undoing the translation
//! and then the rotation of the pose.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::sdf2d::{SampleAdjoint, SampledSketch};
use crate::sketch::SketchParams;

/// Occupancy sharpness used while fitting.
pub const DEFAULT_ETA: f64 = 100.0;

/// Rotation (unit quaternion `w, x, y, z`) followed by a translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct RigidPose {
    rotation: [f64; 4],
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    rotation: [f64; 4],
    translation: [f64; 3],
}

impl TryFrom<PoseRepr> for RigidPose {
    type Error = crate::Error;

    fn try_from(r: PoseRepr) -> Result<Self> {
        // stored quaternions are already unit length; keep them bit-exact
        let q = r.rotation;
        let n2: f64 = q.iter().map(|x| x * x).sum();
        if !(n2.is_finite() && (n2 - 1.0).abs() < 1e-9) {
            return Err(invalid(format!(
                "stored rotation {q:?} is not a unit quaternion"
            )));
        }
        if r.translation.iter().any(|t| !t.is_finite()) {
            return Err(invalid("translation must be finite"));
        }
        Ok(Self {
            rotation: q,
            translation: Vector3::from(r.translation),
        })
    }
}

impl From<RigidPose> for PoseRepr {
    fn from(p: RigidPose) -> Self {
        PoseRepr {
            rotation: p.rotation,
            translation: p.translation.into(),
        }
    }
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    /// Normalizes `rotation`; the zero quaternion is rejected.
    pub fn new(rotation: [f64; 4], translation: Vector3<f64>) -> Result<Self> {
        let n = rotation.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(invalid(format!(
                "rotation quaternion {rotation:?} cannot be normalized"
            )));
        }
        if translation.iter().any(|t| !t.is_finite()) {
            return Err(invalid("translation must be finite"));
        }
        Ok(Self {
            rotation: rotation.map(|x| x / n),
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: [1.0, 0.0, 0.0, 0.0],
            translation: Vector3::zeros(),
        }
    }

    pub fn from_axis_angle(
        axis: Vector3<f64>,
        angle: f64,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let a = axis
            .try_normalize(0.0)
            .ok_or_else(|| invalid("zero rotation axis"))?;
        let (s, c) = (0.5 * angle).sin_cos();
        Self::new([c, s * a.x, s * a.y, s * a.z], translation)
    }

    pub fn rotation(&self) -> [f64; 4] {
        self.rotation
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_matrix(self.rotation)
    }

    /// `R⁻¹ (p − t)`.
    pub fn to_local(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix().tr_mul(&(p - self.translation))
    }

    /// `R p + t`.
    pub fn to_world(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation
    }

    /// Row-major 4×4 homogeneous matrix of the forward transform.
    pub fn matrix4(&self) -> [[f64; 4]; 4] {
        let r = self.rotation_matrix();
        let t = self.translation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    /// Composition `self ∘ other`.
    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        let [a1, b1, c1, d1] = self.rotation;
        let [a2, b2, c2, d2] = other.rotation;
        let q = [
            a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
            a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
            a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
            a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
        ];
        RigidPose::new(q, self.to_world(other.translation)).expect("product of unit quaternions")
    }
}

pub fn to_local(pose: &RigidPose, p: Vector3<f64>) -> Vector3<f64> {
    pose.to_local(p)
}

/// Rotation matrix of a unit quaternion.
pub(crate) fn quat_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Partials of [`quat_matrix`] with respect to `w, x, y, z`.
pub(crate) fn quat_matrix_partials(q: [f64; 4]) -> [Matrix3<f64>; 4] {
    let [w, x, y, z] = q.map(|v| 2.0 * v);
    [
        Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0),
        Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x),
        Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y),
        Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0),
    ]
}

/// Running sums that pull local-point adjoints back to a pose.
///
/// For `p' = R(q/|q|)ᵀ (p − t)` with adjoint `g` of `p'`, the rotation
/// sensitivity is linear in `(p − t) gᵀ` and the translation sensitivity in
/// `g`, so many points reduce to one 3×3 matrix and one vector.
#[derive(Clone, Debug, Default)]
pub(crate) struct PoseAccumulator {
    vg: Matrix3<f64>,
    g: Vector3<f64>,
}

impl PoseAccumulator {
    #[inline]
    pub fn add(&mut self, offset: Vector3<f64>, g: Vector3<f64>) {
        self.vg += offset * g.transpose();
        self.g += g;
    }

    pub fn merge(&mut self, other: &Self) {
        self.vg += other.vg;
        self.g += other.g;
    }

    /// Sensitivities with respect to the raw quaternion (through its
    /// normalization) and the translation.
    pub fn finish(&self, raw_q: [f64; 4]) -> ([f64; 4], Vector3<f64>) {
        let n = raw_q.iter().map(|x| x * x).sum::<f64>().sqrt();
        let q = raw_q.map(|x| x / n);
        let dr = quat_matrix_partials(q);
        let gq_unit: [f64; 4] = std::array::from_fn(|i| dr[i].component_mul(&self.vg).sum());
        let proj: f64 = (0..4).map(|i| q[i] * gq_unit[i]).sum();
        let gq = std::array::from_fn(|i| (gq_unit[i] - q[i] * proj) / n);
        (gq, -(quat_matrix(q) * self.g))
    }
}

/// One extrusion primitive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtrusionParams {
    pub sketch: SketchParams,
    pub pose: RigidPose,
    pub height: f64,
}

impl ExtrusionParams {
    pub fn new(sketch: SketchParams, pose: RigidPose, height: f64) -> Result<Self> {
        if !(height.is_finite() && height > 0.0) {
            return Err(invalid(format!(
                "extrusion height must be positive, got {height}"
            )));
        }
        Ok(Self {
            sketch,
            pose,
            height,
        })
    }

    /// Samples the sketch once for repeated evaluation.
    pub fn prepare(&self, samples_per_curve: usize) -> Result<PreparedExtrusion<'_>> {
        let sketch = SampledSketch::from_curve(&self.sketch.polygon(), samples_per_curve)?
            .with_accelerator();
        Ok(PreparedExtrusion { prim: self, sketch })
    }
}

/// Interior and exterior terms of the extrusion sdf from the sketch sdf `s`
/// and the local height coordinate `z`. At most one is nonzero.
pub fn extrusion_terms(s: f64, height: f64, z: f64) -> (f64, f64) {
    let inside = s.min(height - z).min(z).max(0.0);
    let a = (height - z).min(0.0);
    let b = z.min(0.0);
    let c = s.min(0.0);
    let outside = -(a * a + b * b + c * c).sqrt();
    (inside, outside)
}

/// Extrusion sdf and its partials `(∂/∂s, ∂/∂h, ∂/∂z)`.
pub fn extrusion_partials(s: f64, height: f64, z: f64) -> (f64, [f64; 3]) {
    let top = height - z;
    let m = s.min(top).min(z);
    if m > 0.0 {
        let g = if s <= top && s <= z {
            [1.0, 0.0, 0.0]
        } else if top <= z {
            [0.0, 1.0, -1.0]
        } else {
            [0.0, 0.0, 1.0]
        };
        return (m, g);
    }
    let a = top.min(0.0);
    let b = z.min(0.0);
    let c = s.min(0.0);
    let r = (a * a + b * b + c * c).sqrt();
    if r == 0.0 {
        return (0.0, [0.0; 3]);
    }
    (-r, [-c / r, -a / r, (a - b) / r])
}

/// Extrusion with its sketch sampled.
#[derive(Clone, Debug)]
pub struct PreparedExtrusion<'a> {
    pub prim: &'a ExtrusionParams,
    pub sketch: SampledSketch,
}

impl PreparedExtrusion<'_> {
    pub fn sdf(&self, p: Vector3<f64>) -> f64 {
        let l = self.prim.pose.to_local(p);
        let s = self.sketch.signed_distance(Vector2::new(l.x, l.y)).sdf;
        let (i, o) = extrusion_terms(s, self.prim.height, l.z);
        i + o
    }
}

pub fn extrusion_sdf(prim: &ExtrusionParams, sketch: &SampledSketch, p: Vector3<f64>) -> f64 {
    let l = prim.pose.to_local(p);
    let s = sketch.signed_distance(Vector2::new(l.x, l.y)).sdf;
    let (i, o) = extrusion_terms(s, prim.height, l.z);
    i + o
}

#[inline]
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Soft occupancy `Φ(η · sdf)`, increasing with the (positive inside) sdf.
pub fn occupancy(sdf: f64, eta: f64) -> Result<f64> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(invalid(format!(
            "occupancy sharpness must be positive, got {eta}"
        )));
    }
    Ok(logistic(eta * sdf))
}

/// Occupancy of every point under every primitive (`points × prims`).
pub fn primitive_occupancy_batch(
    prims: &[ExtrusionParams],
    points: &[Vector3<f64>],
    eta: f64,
    samples_per_curve: usize,
) -> Result<DMatrix<f64>> {
    occupancy(0.0, eta)?;
    let prepared = prims
        .iter()
        .map(|p| p.prepare(samples_per_curve))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<f64>> = points
        .par_iter()
        .map(|p| prepared.iter().map(|e| logistic(eta * e.sdf(*p))).collect())
        .collect();
    Ok(DMatrix::from_fn(points.len(), prims.len(), |r, c| {
        rows[r][c]
    }))
}

/// Gradient of one extrusion sdf value with respect to every primitive
/// parameter: the sketch's unconstrained variables, the stored quaternion,
/// the translation and the height.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtrusionGradient {
    pub sketch: Vec<f64>,
    pub rotation: [f64; 4],
    pub translation: Vector3<f64>,
    pub height: f64,
}

/// Extrusion sdf at `p` and its gradient. `sketch` must be sampled with a
/// Jacobian (see [`SampledSketch::with_jacobian`]).
pub fn extrusion_sdf_gradient(
    prim: &ExtrusionParams,
    sketch: &SampledSketch,
    p: Vector3<f64>,
) -> (f64, ExtrusionGradient) {
    let offset = p - prim.pose.translation();
    let l = prim.pose.rotation_matrix().transpose() * offset;
    let (query, partials) = sketch.signed_distance_partials(Vector2::new(l.x, l.y));
    let (sdf, [ds, dh, dz]) = extrusion_partials(query.sdf, prim.height, l.z);
    let mut adj = SampleAdjoint::zeros(sketch.len());
    adj.add(&partials, ds);
    let mut acc = PoseAccumulator::default();
    acc.add(
        offset,
        Vector3::new(ds * partials.query.x, ds * partials.query.y, dz),
    );
    let (rotation, translation) = acc.finish(prim.pose.rotation());
    let grad = ExtrusionGradient {
        sketch: sketch.pullback(&adj),
        rotation,
        translation,
        height: dh,
    };
    (sdf, grad)
}
