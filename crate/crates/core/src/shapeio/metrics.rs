//! Reconstruction metrics: chamfer distance, volumetric IoU and surface F1.

use nalgebra::Vector3;
use rayon::prelude::*;

use super::mesh::Mesh;
use super::spatial::TriangleIndex;
use super::Aabb;
use crate::error::{invalid, Error, Result};
use crate::field::ScalarField;

/// Fraction of the ground-truth bounding-box diagonal used as the default
/// F1 distance threshold.
pub const DEFAULT_F1_FRACTION: f64 = 0.02;

/// Chamfer distance: the mean squared distance from samples of each
/// surface to the other surface, summed over both directions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Chamfer {
    pub raw: f64,
    /// `raw` expressed in units of 10⁻³.
    pub scaled: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub chamfer: Chamfer,
    pub iou: f64,
    /// Harmonic mean of precision and recall, in percent.
    pub f1: f64,
    pub f1_threshold: f64,
}

impl MetricReport {
    pub fn line(&self) -> String {
        format!(
            "CD={:.6} IoU={:.6} F1={:.4}",
            self.chamfer.scaled, self.iou, self.f1
        )
    }
}

fn one_sided(samples: &[Vector3<f64>], surface: &TriangleIndex) -> Vec<f64> {
    samples.par_iter().map(|p| surface.nearest(*p).0).collect()
}

/// Distances are measured from each surface sample to the nearest point of
/// the other triangle surface.
pub fn chamfer_distance(a: &Mesh, b: &Mesh, n_samples: usize, seed: u64) -> Result<Chamfer> {
    let (ia, ib, sa, sb) = prepare(a, b, n_samples, seed)?;
    let raw = mean(&one_sided(&sa, &ib)) + mean(&one_sided(&sb, &ia));
    Ok(Chamfer {
        raw,
        scaled: raw * 1e3,
    })
}

type Prepared = (
    TriangleIndex,
    TriangleIndex,
    Vec<Vector3<f64>>,
    Vec<Vector3<f64>>,
);

fn prepare(a: &Mesh, b: &Mesh, n_samples: usize, seed: u64) -> Result<Prepared> {
    if n_samples == 0 {
        return Err(invalid("metrics need at least one surface sample"));
    }
    if a.is_empty() || b.is_empty() {
        return Err(invalid("metrics need two non-empty surfaces"));
    }
    let ia = TriangleIndex::new(&a.vertices, &a.faces)?;
    let ib = TriangleIndex::new(&b.vertices, &b.faces)?;
    let sa = a.sample_surface(n_samples, seed)?;
    let sb = b.sample_surface(n_samples, seed.wrapping_add(1))?;
    Ok((ia, ib, sa, sb))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `|A ∩ B| / |A ∪ B|` of two grids binarized at 0.5; two empty grids
/// score 1.
pub fn volumetric_iou(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    if a.layout != b.layout {
        return Err(Error::DimensionMismatch(
            "IoU needs two fields on the same grid".into(),
        ));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.values.iter().zip(&b.values) {
        let (x, y) = (*x >= 0.5, *y >= 0.5);
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Surface F1 score in percent at distance `threshold`.
pub fn f1_score(
    pred: &Mesh,
    gt: &Mesh,
    n_samples: usize,
    threshold: f64,
    seed: u64,
) -> Result<f64> {
    let (ip, ig, sp, sg) = prepare(pred, gt, n_samples, seed)?;
    Ok(f1_from(&sp, &sg, &ip, &ig, threshold))
}

fn f1_from(
    sp: &[Vector3<f64>],
    sg: &[Vector3<f64>],
    ip: &TriangleIndex,
    ig: &TriangleIndex,
    threshold: f64,
) -> f64 {
    let t2 = threshold * threshold;
    let precision = one_sided(sp, ig).iter().filter(|&&d| d <= t2).count() as f64 / sp.len() as f64;
    let recall = one_sided(sg, ip).iter().filter(|&&d| d <= t2).count() as f64 / sg.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        100.0 * 2.0 * precision * recall / (precision + recall)
    }
}

/// Chamfer distance, volumetric IoU and F1 between a prediction and a
/// ground truth, each given as a surface mesh and an occupancy grid. The
/// F1 threshold defaults to 2% of the ground-truth bounding-box diagonal.
pub fn metrics(
    pred: (&Mesh, &ScalarField),
    gt: (&Mesh, &ScalarField),
    n_samples: usize,
    f1_threshold: Option<f64>,
    seed: u64,
) -> Result<MetricReport> {
    let iou = volumetric_iou(pred.1, gt.1)?;
    let (ip, ig, sp, sg) = prepare(pred.0, gt.0, n_samples, seed)?;
    let threshold = match f1_threshold {
        Some(t) if t.is_finite() && t > 0.0 => t,
        Some(t) => return Err(invalid(format!("F1 threshold must be positive, got {t}"))),
        None => DEFAULT_F1_FRACTION * Aabb::of_points(&gt.0.vertices)?.diagonal(),
    };
    let dp = one_sided(&sp, &ig);
    let dg = one_sided(&sg, &ip);
    let raw = mean(&dp) + mean(&dg);
    let f1 = f1_from(&sp, &sg, &ip, &ig, threshold);
    Ok(MetricReport {
        chamfer: Chamfer {
            raw,
            scaled: raw * 1e3,
        },
        iou,
        f1,
        f1_threshold: threshold,
    })
}
