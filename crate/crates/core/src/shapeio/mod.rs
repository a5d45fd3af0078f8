//! Data ingestion, testing-point sampling, surface extraction, metrics and
//! CAD/mesh export.

mod mesh;
mod metrics;
mod pointcloud;
mod scad;
mod spatial;

use nalgebra::Vector3;

use crate::error::{invalid, Result};
use crate::field::Grid;
use crate::model::ShapeModel;
use crate::sdf2d::SampledSketch;

pub use mesh::{marching_cubes, Mesh};
pub use metrics::{chamfer_distance, f1_score, metrics, volumetric_iou, Chamfer, MetricReport};
pub use pointcloud::{voxelize, PointCloud};
pub use scad::{export_fidelity, export_scad, parse_scad, ScadShape};
pub use spatial::TriangleIndex;

/// Padding per side used for testing grids.
pub const DEFAULT_PADDING: f64 = 0.15;

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Result<Self> {
        for a in 0..3 {
            if !(min[a].is_finite() && max[a].is_finite() && min[a] < max[a]) {
                return Err(invalid(format!(
                    "degenerate bounding box [{}, {}] on axis {a}",
                    min[a], max[a]
                )));
            }
        }
        Ok(Self { min, max })
    }

    /// Tight box of a point set; fails if the set is empty or flat.
    pub fn of_points(points: &[Vector3<f64>]) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| invalid("bounding box of an empty point set"))?;
        let (mut lo, mut hi) = (*first, *first);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        Self::new(lo, hi)
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Box grown by `fraction` of its extent on each side of every axis.
    pub fn padded(&self, fraction: f64) -> Self {
        let e = self.extent() * fraction;
        Self {
            min: self.min - e,
            max: self.max + e,
        }
    }
}

/// Box around every primitive of `model` (sketch samples swept over the
/// extrusion height, in world coordinates). Fails for a model without
/// primitives.
pub fn model_bounds(model: &ShapeModel, samples_per_curve: usize) -> Result<Aabb> {
    let mut corners = Vec::new();
    for prim in model.primitives() {
        let sampled = SampledSketch::from_curve(&prim.sketch.polygon(), samples_per_curve)?;
        for p in sampled.samples() {
            for z in [0.0, prim.height] {
                corners.push(prim.pose.to_world(Vector3::new(p.x, p.y, z)));
            }
        }
    }
    Aabb::of_points(&corners)
}

/// Regular `resolution³` grid over `bbox` grown by `padding` per side.
pub fn testing_grid(bbox: &Aabb, resolution: usize, padding: f64) -> Result<Grid> {
    if resolution < 2 {
        return Err(invalid(format!(
            "testing grids need resolution ≥ 2, got {resolution}"
        )));
    }
    if !(padding.is_finite() && padding >= 0.0) {
        return Err(invalid(format!(
            "padding must be non-negative, got {padding}"
        )));
    }
    let b = Aabb::new(bbox.min, bbox.max)?.padded(padding);
    Grid::new(
        vec![resolution; 3],
        b.min.as_slice().to_vec(),
        b.max.as_slice().to_vec(),
    )
}

/// Testing points of [`testing_grid`], `x` varying fastest.
pub fn sample_testing_grid(
    bbox: &Aabb,
    resolution: usize,
    padding: f64,
) -> Result<Vec<Vector3<f64>>> {
    Ok(testing_grid(bbox, resolution, padding)?.points3())
}
