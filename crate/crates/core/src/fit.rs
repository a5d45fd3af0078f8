//! Direct gradient fitting of sketches and shape models to targets.
//!
//! The total loss is `recon + λ_p · prim + λ_w · weight_reg` where `recon`
//! is the mean squared occupancy (or distance) error over the testing
//! points, `prim` pulls every primitive's surface towards some testing point
//! and `weight_reg` keeps the rational weights near one. Gradients are
//! either analytic (reverse mode through every stage, with the active branch
//! of each min/max and the frozen nearest sample) or central differences.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::extrude::{extrusion_partials, logistic, ExtrusionParams, PoseAccumulator, RigidPose};
use crate::field::ScalarField;
use crate::model::{ModelLayout, ShapeModel};
use crate::sdf2d::{SampleAdjoint, SampledSketch, SdfPartials};
use crate::sketch::{Continuity, SketchParams, DEFAULT_CURVES};
use crate::stump::StumpGrad;

/// Points per parallel work item. Fixed so that sums are reduced in the
/// same order for any thread count.
const CHUNK: usize = 512;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    Analytic,
    FiniteDifference,
}

/// Fitting hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub learning_rate: f64,
    /// The step size decays along a half cosine from `learning_rate` to
    /// `learning_rate · lr_final_factor`.
    pub lr_final_factor: f64,
    pub iterations: usize,
    pub lambda_p: f64,
    pub lambda_w: f64,
    /// Weight regularization used by 2D sketch fitting.
    pub lambda_w_2d: f64,
    /// Final occupancy sharpness.
    pub eta: f64,
    /// Optional starting sharpness, doubled every `eta_double_every`
    /// iterations until it reaches `eta`.
    pub eta_start: Option<f64>,
    pub eta_double_every: usize,
    pub samples_per_curve: usize,
    pub gradient_mode: GradientMode,
    pub fd_step: f64,
    pub seed: u64,
    pub restarts: usize,
    pub n_curves: usize,
    pub continuity: Continuity,
    /// Standard deviation of the Gaussian perturbation applied to the
    /// unconstrained sketch variables of the initial circle.
    pub init_noise: f64,
    pub binarize_threshold: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            lr_final_factor: 1e-2,
            iterations: 2000,
            lambda_p: 0.01,
            lambda_w: 0.001,
            lambda_w_2d: 0.0,
            eta: crate::extrude::DEFAULT_ETA,
            eta_start: None,
            eta_double_every: 0,
            samples_per_curve: crate::sdf2d::DEFAULT_SAMPLES,
            gradient_mode: GradientMode::Analytic,
            fd_step: 1e-5,
            seed: 0,
            restarts: 3,
            n_curves: DEFAULT_CURVES,
            continuity: Continuity::C0,
            init_noise: 0.0,
            binarize_threshold: 0.5,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(format!("{name} must be positive, got {v}")))
            }
        };
        let non_negative = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(invalid(format!("{name} must be non-negative, got {v}")))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        positive("lr_final_factor", self.lr_final_factor)?;
        if self.lr_final_factor > 1.0 {
            return Err(invalid("lr_final_factor must not exceed 1"));
        }
        non_negative("lambda_p", self.lambda_p)?;
        non_negative("lambda_w", self.lambda_w)?;
        non_negative("lambda_w_2d", self.lambda_w_2d)?;
        non_negative("init_noise", self.init_noise)?;
        positive("eta", self.eta)?;
        if let Some(s) = self.eta_start {
            positive("eta_start", s)?;
        }
        if !(self.fd_step > 0.0 && self.fd_step <= 1e-2) {
            return Err(invalid(format!(
                "fd_step must lie in (0, 1e-2], got {}",
                self.fd_step
            )));
        }
        if self.samples_per_curve < 4 {
            return Err(invalid("samples_per_curve must be at least 4"));
        }
        if self.restarts == 0 {
            return Err(invalid("restarts must be at least 1"));
        }
        if self.n_curves < 2 {
            return Err(invalid("n_curves must be at least 2"));
        }
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return Err(invalid("binarize_threshold must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Occupancy sharpness used at `iteration`.
    pub fn eta_at(&self, iteration: usize) -> f64 {
        match self.eta_start {
            Some(start) if self.eta_double_every > 0 => {
                let doublings = (iteration / self.eta_double_every).min(64) as i32;
                (start * 2f64.powi(doublings)).min(self.eta)
            }
            _ => self.eta,
        }
    }

    /// Step size used at `iteration`.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        let f = self.lr_final_factor;
        let progress = iteration as f64 / self.iterations.max(1) as f64;
        self.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + (PI * progress).cos()))
    }
}

/// Loss terms at one parameter vector.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub recon: f64,
    pub prim: f64,
    pub weight_reg: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub iteration: usize,
    pub recon: f64,
    pub prim: f64,
    pub weight_reg: f64,
    pub total: f64,
}

/// Loss history of one fit; `total = recon + λ_p · prim + λ_w · weight_reg`
/// in every row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub lambda_p: f64,
    pub lambda_w: f64,
    pub rows: Vec<LossRow>,
}

impl LossReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,recon,prim,weight_reg,total\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{:?},{:?},{:?},{:?}",
                r.iteration, r.recon, r.prim, r.weight_reg, r.total
            )
            .unwrap();
        }
        s
    }

    pub fn first(&self) -> Option<&LossRow> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&LossRow> {
        self.rows.last()
    }
}

/// Mean squared error between predicted and target occupancies.
pub fn loss_reconstruction(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(invalid("reconstruction loss needs at least one point"));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64)
}

/// `(1/K) Σₖ minₙ SDFₖ(pₙ)²` over the testing points.
pub fn loss_primitive(
    prims: &[ExtrusionParams],
    points: &[Vector3<f64>],
    samples_per_curve: usize,
) -> Result<f64> {
    if prims.is_empty() || points.is_empty() {
        return Err(invalid(
            "primitive loss needs at least one primitive and one point",
        ));
    }
    let mut sum = 0.0;
    for prim in prims {
        let e = prim.prepare(samples_per_curve)?;
        let min = points
            .par_iter()
            .map(|p| {
                let s = e.sdf(*p);
                s * s
            })
            .reduce(|| f64::INFINITY, f64::min);
        sum += min;
    }
    Ok(sum / prims.len() as f64)
}

/// `Σₖ Σᵢ (wᵢᵏ − 1)²` over every sketch.
pub fn loss_weight_reg(sketches: &[&SketchParams]) -> f64 {
    sketches.iter().map(|s| s.weight_penalty().0).sum()
}

/// A differentiable loss over a flat parameter vector.
pub trait Objective {
    fn dim(&self) -> usize;
    fn loss(&self, x: &[f64]) -> Result<LossTerms>;
    fn loss_and_gradient(&self, x: &[f64]) -> Result<(LossTerms, Vec<f64>)>;
}

/// Loss terms and the gradient of the total loss.
pub fn gradient(
    obj: &dyn Objective,
    x: &[f64],
    mode: GradientMode,
    fd_step: f64,
) -> Result<(LossTerms, Vec<f64>)> {
    if x.len() != obj.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} values for {} variables",
            x.len(),
            obj.dim()
        )));
    }
    match mode {
        GradientMode::Analytic => obj.loss_and_gradient(x),
        GradientMode::FiniteDifference => {
            if !(fd_step > 0.0 && fd_step <= 1e-2) {
                return Err(invalid(format!(
                    "fd_step must lie in (0, 1e-2], got {fd_step}"
                )));
            }
            let terms = obj.loss(x)?;
            let mut y = x.to_vec();
            let mut g = vec![0.0; x.len()];
            for i in 0..x.len() {
                y[i] = x[i] + fd_step;
                let up = obj.loss(&y)?.total;
                y[i] = x[i] - fd_step;
                let down = obj.loss(&y)?.total;
                y[i] = x[i];
                g[i] = (up - down) / (2.0 * fd_step);
            }
            Ok((terms, g))
        }
    }
}

/// Unsigned distance of a sketch against a 2D distance-field target.
pub struct SketchObjective {
    points: Vec<Vector2<f64>>,
    target: Vec<f64>,
    n_curves: usize,
    mode: Continuity,
    start_angle: f64,
    samples_per_curve: usize,
    lambda_w: f64,
}

impl SketchObjective {
    pub fn new(target: &ScalarField, config: &FitConfig) -> Result<Self> {
        let grid = target
            .grid()
            .filter(|g| g.dim() == 2)
            .ok_or_else(|| invalid("2D sketch fitting needs a 2D grid target"))?;
        if let Some(v) = target.values.iter().find(|v| !v.is_finite()) {
            return Err(invalid(format!(
                "target distance field holds a non-finite value {v}"
            )));
        }
        Ok(Self {
            points: grid.points2(),
            target: target.values.clone(),
            n_curves: config.n_curves,
            mode: config.continuity,
            start_angle: 0.0,
            samples_per_curve: config.samples_per_curve,
            lambda_w: config.lambda_w_2d,
        })
    }

    pub fn sketch(&self, x: &[f64]) -> Result<SketchParams> {
        SketchParams::from_unconstrained(self.n_curves, self.mode, self.start_angle, x)
    }

    fn eval(&self, x: &[f64], want_grad: bool) -> Result<(LossTerms, Vec<f64>)> {
        let params = self.sketch(x)?;
        let sampled =
            SampledSketch::with_jacobian(&params, self.samples_per_curve)?.with_accelerator();
        let m = self.points.len() as f64;
        let parts: Vec<(f64, Option<SampleAdjoint>)> = self
            .points
            .par_chunks(CHUNK)
            .zip(self.target.par_chunks(CHUNK))
            .map(|(pts, tgt)| {
                let mut sum = 0.0;
                let mut adj = want_grad.then(|| SampleAdjoint::zeros(sampled.len()));
                for (p, t) in pts.iter().zip(tgt) {
                    if let Some(adj) = adj.as_mut() {
                        let (q, partials) = sampled.signed_distance_partials(*p);
                        let r = q.sdf.abs() - t;
                        sum += r * r;
                        adj.add(&partials, 2.0 * r * q.sdf.signum() / m);
                    } else {
                        let r = sampled.signed_distance(*p).sdf.abs() - t;
                        sum += r * r;
                    }
                }
                (sum, adj)
            })
            .collect();
        let mut recon = 0.0;
        let mut adj = want_grad.then(|| SampleAdjoint::zeros(sampled.len()));
        for (s, a) in parts {
            recon += s;
            if let (Some(total), Some(a)) = (adj.as_mut(), a) {
                *total = std::mem::replace(total, SampleAdjoint::zeros(0)).merge(&a);
            }
        }
        recon /= m;
        let (reg, reg_grad) = params.weight_penalty();
        let terms = LossTerms {
            recon,
            prim: 0.0,
            weight_reg: reg,
            total: recon + self.lambda_w * reg,
        };
        let grad = match adj {
            Some(adj) => {
                let mut g = sampled.pullback(&adj);
                for (a, b) in g.iter_mut().zip(&reg_grad) {
                    *a += self.lambda_w * b;
                }
                g
            }
            None => Vec::new(),
        };
        Ok((terms, grad))
    }
}

impl Objective for SketchObjective {
    fn dim(&self) -> usize {
        self.mode.free_count(self.n_curves)
    }

    fn loss(&self, x: &[f64]) -> Result<LossTerms> {
        Ok(self.eval(x, false)?.0)
    }

    fn loss_and_gradient(&self, x: &[f64]) -> Result<(LossTerms, Vec<f64>)> {
        self.eval(x, true)
    }
}

/// Occupancy reconstruction of a 3D target by a soft shape model.
pub struct ShapeObjective {
    layout: ModelLayout,
    points: Vec<Vector3<f64>>,
    target: Vec<f64>,
    pub eta: f64,
    lambda_p: f64,
    lambda_w: f64,
    samples_per_curve: usize,
}

struct PrimAcc {
    adj: SampleAdjoint,
    pose: PoseAccumulator,
    height: f64,
}

struct ChunkAcc {
    recon: f64,
    /// Per primitive: smallest sdf² and the global index of its point.
    min_sq: Vec<(f64, usize)>,
    prims: Vec<PrimAcc>,
    stump: StumpGrad,
}

struct PointEval {
    offset: Vector3<f64>,
    partials: SdfPartials,
    sdf: f64,
    d: [f64; 3],
}

impl ShapeObjective {
    pub fn new(
        layout: ModelLayout,
        points: Vec<Vector3<f64>>,
        target: Vec<f64>,
        config: &FitConfig,
    ) -> Result<Self> {
        if points.len() != target.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} testing points for {} target values",
                points.len(),
                target.len()
            )));
        }
        if points.is_empty() || layout.n_prims() == 0 {
            return Err(invalid(
                "shape fitting needs testing points and at least one primitive",
            ));
        }
        if let Some(v) = target.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid(format!(
                "target occupancy must lie in [0, 1], got {v}"
            )));
        }
        Ok(Self {
            layout,
            points,
            target,
            eta: config.eta,
            lambda_p: config.lambda_p,
            lambda_w: config.lambda_w,
            samples_per_curve: config.samples_per_curve,
        })
    }

    pub fn layout(&self) -> &ModelLayout {
        &self.layout
    }

    fn eval(&self, x: &[f64], want_grad: bool) -> Result<(LossTerms, Vec<f64>)> {
        let prims = self.layout.decode_primitives(x)?;
        let stump = self.layout.decode_stump(x)?;
        let sketches = prims
            .iter()
            .map(|p| {
                Ok(
                    SampledSketch::with_jacobian(&p.sketch, self.samples_per_curve)?
                        .with_accelerator(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let rots: Vec<_> = prims
            .iter()
            .map(|p| p.pose.rotation_matrix().transpose())
            .collect();
        let kk = prims.len();
        let jj = stump.n_nodes();
        let m = self.points.len() as f64;
        let eta = self.eta;

        let local = |k: usize, p: Vector3<f64>| -> PointEval {
            let offset = p - prims[k].pose.translation();
            let l = rots[k] * offset;
            let (q, partials) = sketches[k].signed_distance_partials(Vector2::new(l.x, l.y));
            let (sdf, d) = extrusion_partials(q.sdf, prims[k].height, l.z);
            PointEval {
                offset,
                partials,
                sdf,
                d,
            }
        };
        let push = |acc: &mut PrimAcc, e: &PointEval, g_sdf: f64| {
            let gs = g_sdf * e.d[0];
            if gs != 0.0 {
                acc.adj.add(&e.partials, gs);
            }
            let gl = Vector3::new(
                gs * e.partials.query.x,
                gs * e.partials.query.y,
                g_sdf * e.d[2],
            );
            acc.pose.add(e.offset, gl);
            acc.height += g_sdf * e.d[1];
        };
        let new_prims = || -> Vec<PrimAcc> {
            sketches
                .iter()
                .map(|s| PrimAcc {
                    adj: SampleAdjoint::zeros(if want_grad { s.len() } else { 0 }),
                    pose: PoseAccumulator::default(),
                    height: 0.0,
                })
                .collect()
        };

        let chunks: Vec<ChunkAcc> = self
            .points
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(ci, pts)| {
                let mut acc = ChunkAcc {
                    recon: 0.0,
                    min_sq: vec![(f64::INFINITY, 0); kk],
                    prims: new_prims(),
                    stump: StumpGrad::zeros(kk, jj),
                };
                let mut occ = vec![0.0; kk];
                let mut d_occ = vec![0.0; kk];
                let mut evals = Vec::with_capacity(kk);
                for (i, p) in pts.iter().enumerate() {
                    let gi = ci * CHUNK + i;
                    evals.clear();
                    for k in 0..kk {
                        let e = local(k, *p);
                        occ[k] = logistic(eta * e.sdf);
                        let sq = e.sdf * e.sdf;
                        if sq < acc.min_sq[k].0 {
                            acc.min_sq[k] = (sq, gi);
                        }
                        evals.push(e);
                    }
                    let value = stump.evaluate_point(&occ);
                    let r = value - self.target[gi];
                    acc.recon += r * r;
                    if want_grad && r != 0.0 {
                        d_occ.iter_mut().for_each(|v| *v = 0.0);
                        stump.backward_point(&occ, 2.0 * r / m, &mut acc.stump, &mut d_occ);
                        for k in 0..kk {
                            if d_occ[k] != 0.0 {
                                let g_sdf = d_occ[k] * eta * occ[k] * (1.0 - occ[k]);
                                push(&mut acc.prims[k], &evals[k], g_sdf);
                            }
                        }
                    }
                }
                acc
            })
            .collect();

        let mut recon = 0.0;
        let mut min_sq = vec![(f64::INFINITY, 0); kk];
        let mut total_prims = new_prims();
        let mut stump_grad = StumpGrad::zeros(kk, jj);
        for c in chunks {
            recon += c.recon;
            for k in 0..kk {
                if c.min_sq[k].0 < min_sq[k].0 {
                    min_sq[k] = c.min_sq[k];
                }
                if want_grad {
                    let t = &mut total_prims[k];
                    let a = &c.prims[k];
                    t.adj = std::mem::replace(&mut t.adj, SampleAdjoint::zeros(0)).merge(&a.adj);
                    t.pose.merge(&a.pose);
                    t.height += a.height;
                }
            }
            if want_grad {
                stump_grad = stump_grad.merge(&c.stump);
            }
        }
        recon /= m;
        let prim_loss = min_sq.iter().map(|(v, _)| v).sum::<f64>() / kk as f64;
        let regs: Vec<_> = prims.iter().map(|p| p.sketch.weight_penalty()).collect();
        let weight_reg: f64 = regs.iter().map(|r| r.0).sum();
        let terms = LossTerms {
            recon,
            prim: prim_loss,
            weight_reg,
            total: recon + self.lambda_p * prim_loss + self.lambda_w * weight_reg,
        };
        if !want_grad {
            return Ok((terms, Vec::new()));
        }

        for k in 0..kk {
            let e = local(k, self.points[min_sq[k].1]);
            push(
                &mut total_prims[k],
                &e,
                self.lambda_p * 2.0 * e.sdf / kk as f64,
            );
        }
        let mut g = vec![0.0; self.layout.len()];
        for k in 0..kk {
            let slots = self.layout.primitive(k);
            let acc = &total_prims[k];
            let gs = sketches[k].pullback(&acc.adj);
            for (i, idx) in slots.sketch.clone().enumerate() {
                g[idx] = gs[i] + self.lambda_w * regs[k].1[i];
            }
            let r = &x[slots.rotation.clone()];
            let (gq, gt) = acc.pose.finish([r[0], r[1], r[2], r[3]]);
            g[slots.rotation.clone()].copy_from_slice(&gq);
            g[slots.translation.clone()].copy_from_slice(gt.as_slice());
            g[slots.log_height] = acc.height * prims[k].height;
        }
        let chain = |range: std::ops::Range<usize>, gv: &[f64], vals: &[f64], g: &mut [f64]| {
            for ((idx, gi), v) in range.zip(gv).zip(vals) {
                g[idx] = gi * v * (1.0 - v);
            }
        };
        chain(
            self.layout.complement(),
            &stump_grad.complement,
            stump.complement(),
            &mut g,
        );
        chain(
            self.layout.inter_select(),
            &stump_grad.inter_select,
            stump.inter_select(),
            &mut g,
        );
        chain(
            self.layout.union_select(),
            &stump_grad.union_select,
            stump.union_select(),
            &mut g,
        );
        Ok((terms, g))
    }
}

impl Objective for ShapeObjective {
    fn dim(&self) -> usize {
        self.layout.len()
    }

    fn loss(&self, x: &[f64]) -> Result<LossTerms> {
        Ok(self.eval(x, false)?.0)
    }

    fn loss_and_gradient(&self, x: &[f64]) -> Result<(LossTerms, Vec<f64>)> {
        self.eval(x, true)
    }
}

/// Adaptive-moment gradient descent.
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Adam {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step(&mut self, x: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            x[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.epsilon);
        }
    }
}

/// Runs the optimizer and returns the best parameters seen at the final
/// sharpness together with the loss history. The history has one row per
/// iteration plus a final row for the parameters after the last step.
fn optimize<O: Objective>(
    obj: &mut O,
    mut x: Vec<f64>,
    config: &FitConfig,
    set_eta: impl Fn(&mut O, f64),
    lambdas: (f64, f64),
) -> Result<(Vec<f64>, LossReport)> {
    let mut adam = Adam::new(x.len());
    let mut report = LossReport {
        lambda_p: lambdas.0,
        lambda_w: lambdas.1,
        rows: Vec::new(),
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for it in 0..=config.iterations {
        let eta = config.eta_at(it);
        set_eta(obj, eta);
        let last = it == config.iterations;
        let (terms, g) = if last {
            (obj.loss(&x)?, Vec::new())
        } else {
            gradient(&*obj, &x, config.gradient_mode, config.fd_step)?
        };
        if !terms.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                detail: format!(
                    "recon={:?} prim={:?} weight_reg={:?} total={:?}",
                    terms.recon, terms.prim, terms.weight_reg, terms.total
                ),
            });
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                detail: format!("gradient component {i} is {:?}", g[i]),
            });
        }
        report.rows.push(LossRow {
            iteration: it,
            recon: terms.recon,
            prim: terms.prim,
            weight_reg: terms.weight_reg,
            total: terms.total,
        });
        if eta == config.eta && best.as_ref().is_none_or(|(b, _)| terms.total < *b) {
            best = Some((terms.total, x.clone()));
        }
        if !last {
            adam.step(&mut x, &g, config.lr_at(it));
        }
    }
    Ok((best.map(|(_, x)| x).unwrap_or(x), report))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn initial_circle(config: &FitConfig, radius: f64, start_angle: f64) -> Result<SketchParams> {
    match config.continuity {
        Continuity::C0 => SketchParams::circle(config.n_curves, radius, start_angle),
        Continuity::C1 => SketchParams::circle_c1(config.n_curves, radius, start_angle),
    }
}

/// Fits a sketch to an unsigned distance field on a 2D grid, starting from
/// the unit circle (optionally perturbed by `init_noise`).
pub fn fit_sketch_2d(
    target: &ScalarField,
    config: &FitConfig,
) -> Result<(SketchParams, LossReport)> {
    config.validate()?;
    let mut obj = SketchObjective::new(target, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut x = initial_circle(config, 1.0, 0.0)?.to_unconstrained();
    if config.init_noise > 0.0 {
        for v in &mut x {
            *v += config.init_noise * normal(&mut rng);
        }
    }
    let (best, report) = optimize(&mut obj, x, config, |_, _| {}, (0.0, config.lambda_w_2d))?;
    Ok((obj.sketch(&best)?, report))
}

/// Result of a 3D fit.
#[derive(Clone, Debug)]
pub struct ShapeFit {
    pub soft: ShapeModel,
    pub hard: ShapeModel,
    pub report: LossReport,
    /// Index of the winning restart.
    pub restart: usize,
    /// Best total loss of every restart.
    pub restart_losses: Vec<f64>,
}

/// Axis-aligned bounds of the target cells with occupancy ≥ 0.5, or of the
/// whole grid if none is occupied.
fn occupied_bounds(points: &[Vector3<f64>], target: &[f64]) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut any = false;
    for (p, &t) in points.iter().zip(target) {
        if t >= 0.5 {
            any = true;
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
    }
    if !any {
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
    }
    (lo, hi)
}

/// Random starting model inside `bounds`. The first primitive covers the
/// bounds along the z axis; the others are smaller, randomly placed and
/// extruded along a random coordinate axis. Every primitive starts in its
/// own union node.
pub fn initial_model(
    k: usize,
    j: usize,
    bounds: ([f64; 3], [f64; 3]),
    config: &FitConfig,
    seed: u64,
) -> Result<ShapeModel> {
    if k == 0 || j == 0 {
        return Err(invalid(
            "fitting needs K ≥ 1 primitives and J ≥ 1 intersection nodes",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = bounds;
    let ext: [f64; 3] = std::array::from_fn(|a| (hi[a] - lo[a]).max(1e-3));
    let center = Vector3::from_fn(|a, _| 0.5 * (lo[a] + hi[a]));
    let start = PI / config.n_curves as f64;
    let mut prims = Vec::with_capacity(k);
    for i in 0..k {
        let axis = if i == 0 { 2 } else { rng.gen_range(0..3) };
        let (q, plane) = match axis {
            0 => ([1.0, 0.0, 1.0, 0.0], [1, 2]),
            1 => ([1.0, -1.0, 0.0, 0.0], [0, 2]),
            _ => ([1.0, 0.0, 0.0, 0.0], [0, 1]),
        };
        let q: [f64; 4] = std::array::from_fn(|c| q[c] + 0.02 * normal(&mut rng));
        let (scale, c) = if i == 0 {
            (0.9, center)
        } else {
            let c = Vector3::from_fn(|a, _| center[a] + 0.5 * ext[a] * rng.gen_range(-0.5..0.5));
            (rng.gen_range(0.3..0.6), c)
        };
        let radius = scale * 0.5 * ext[plane[0]].min(ext[plane[1]]);
        let height = scale * ext[axis];
        let mut sketch = initial_circle(config, radius, start)?.to_unconstrained();
        for v in &mut sketch {
            *v += 0.02 * normal(&mut rng);
        }
        let sketch =
            SketchParams::from_unconstrained(config.n_curves, config.continuity, start, &sketch)?;
        let rot = RigidPose::new(q, Vector3::zeros())?;
        let translation = c - rot.rotation_matrix() * Vector3::new(0.0, 0.0, 0.5 * height);
        prims.push(ExtrusionParams::new(
            sketch,
            RigidPose::new(q, translation)?,
            height,
        )?);
    }
    let p = |l: f64| logistic(l);
    let complement = (0..k).map(|_| p(-4.0 + 0.5 * normal(&mut rng))).collect();
    let mut select = vec![0.0; k * j];
    for a in 0..k {
        for b in 0..j {
            let base = if a % j == b { 3.0 } else { -3.0 };
            select[a * j + b] = p(base + 0.5 * normal(&mut rng));
        }
    }
    let union = (0..j).map(|_| p(3.0 + 0.5 * normal(&mut rng))).collect();
    let stump =
        crate::stump::StumpParams::new(complement, select, union, crate::stump::StumpMode::Soft)?;
    ShapeModel::new(prims, stump, config.eta)
}

/// Refines `init` against target occupancies at the given testing points.
pub fn fit_model(
    init: &ShapeModel,
    points: Vec<Vector3<f64>>,
    target: Vec<f64>,
    config: &FitConfig,
) -> Result<(ShapeModel, LossReport)> {
    config.validate()?;
    if init.is_hard() {
        return Err(invalid("fitting starts from a soft model"));
    }
    let layout = ModelLayout::of(init)?;
    let x = layout.encode(init)?;
    let mut obj = ShapeObjective::new(layout.clone(), points, target, config)?;
    let (best, report) = optimize(
        &mut obj,
        x,
        config,
        |o, eta| o.eta = eta,
        (config.lambda_p, config.lambda_w),
    )?;
    let mut model = layout.decode(&best, config.eta)?;
    for (key, value) in init.metadata() {
        model.set_metadata(key.clone(), value.clone());
    }
    Ok((model, report))
}

/// Fits `K` primitives and `J` intersection nodes to a 3D occupancy grid
/// with random restarts; the restart with the lowest best total loss wins.
pub fn fit_shapes_3d(
    target: &ScalarField,
    k: usize,
    j: usize,
    config: &FitConfig,
) -> Result<ShapeFit> {
    config.validate()?;
    if k == 0 || j == 0 {
        return Err(invalid(
            "fitting needs K ≥ 1 primitives and J ≥ 1 intersection nodes",
        ));
    }
    let grid = target
        .grid()
        .filter(|g| g.dim() == 3)
        .ok_or_else(|| invalid("3D fitting needs a 3D grid target"))?;
    let points = grid.points3();
    let bounds = occupied_bounds(&points, &target.values);
    let mut best: Option<(f64, usize, ShapeModel, LossReport)> = None;
    let mut restart_losses = Vec::with_capacity(config.restarts);
    for r in 0..config.restarts {
        let seed = config.seed.wrapping_add(r as u64);
        let init = initial_model(k, j, bounds, config, seed)?;
        let (model, report) = fit_model(&init, points.clone(), target.values.clone(), config)?;
        let final_eta_rows = report
            .rows
            .iter()
            .filter(|row| config.eta_at(row.iteration) == config.eta);
        let loss = final_eta_rows
            .map(|row| row.total)
            .fold(f64::INFINITY, f64::min);
        restart_losses.push(loss);
        if best.as_ref().is_none_or(|b| loss < b.0) {
            best = Some((loss, r, model, report));
        }
    }
    let (_, restart, mut soft, report) = best.expect("at least one restart");
    soft.set_metadata("restart", restart.to_string());
    soft.set_metadata("seed", config.seed.to_string());
    let hard = soft.binarize(config.binarize_threshold)?;
    Ok(ShapeFit {
        soft,
        hard,
        report,
        restart,
        restart_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;

    #[test]
    fn reconstruction_loss_examples() {
        assert_eq!(loss_reconstruction(&[0.2, 0.7], &[0.2, 0.7]).unwrap(), 0.0);
        assert_eq!(
            loss_reconstruction(&[1.0, 0.0, 1.0], &[0.0, 1.0, 0.0]).unwrap(),
            1.0
        );
        assert_eq!(loss_reconstruction(&[0.5], &[0.0]).unwrap(), 0.25);
        assert!(loss_reconstruction(&[0.5], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn primitive_loss_examples() {
        let cyl = ExtrusionParams::new(
            SketchParams::circle(4, 1.0, 0.0).unwrap(),
            RigidPose::identity(),
            2.0,
        )
        .unwrap();
        let far = vec![Vector3::new(3.0, 0.0, 1.0), Vector3::new(0.0, 4.0, 1.0)];
        let l = loss_primitive(std::slice::from_ref(&cyl), &far, 400).unwrap();
        assert!((l - 4.0).abs() < 1e-6, "{l}");
        let dup = loss_primitive(&[cyl.clone(), cyl.clone()], &far, 400).unwrap();
        assert!((dup - l).abs() < 1e-15);
        let touching = vec![Vector3::new(1.0, 0.0, 1.0)];
        assert!(loss_primitive(&[cyl], &touching, 400).unwrap() < 1e-12);
        assert!(loss_primitive(&[], &far, 100).is_err());
    }

    #[test]
    fn weight_reg_examples() {
        let unit = SketchParams::unit(4, Continuity::C0).unwrap();
        assert_eq!(loss_weight_reg(&[&unit]), 0.0);
        let c = SketchParams::circle(4, 1.0, 0.0).unwrap();
        assert!((loss_weight_reg(&[&c]) - 0.305).abs() < 1e-3);
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        let bad = FitConfig {
            fd_step: 0.1,
            ..FitConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = FitConfig {
            learning_rate: -1.0,
            ..FitConfig::default()
        };
        assert!(bad.validate().is_err());
        let c = FitConfig {
            eta_start: Some(10.0),
            eta_double_every: 100,
            eta: 100.0,
            ..FitConfig::default()
        };
        assert_eq!(c.eta_at(0), 10.0);
        assert_eq!(c.eta_at(250), 40.0);
        assert_eq!(c.eta_at(10_000), 100.0);
        let c = FitConfig::default();
        assert_eq!(c.lr_at(0), c.learning_rate);
        assert!((c.lr_at(c.iterations) - c.learning_rate * c.lr_final_factor).abs() < 1e-15);
    }

    fn circle_target(res: usize) -> ScalarField {
        ScalarField::sample2(Grid::square(res, -1.5, 1.5).unwrap(), |p| {
            (p.norm() - 1.0).abs()
        })
    }

    #[test]
    fn zero_iterations_return_the_initial_sketch() {
        let cfg = FitConfig {
            iterations: 0,
            ..FitConfig::default()
        };
        let (s, report) = fit_sketch_2d(&circle_target(21), &cfg).unwrap();
        assert_eq!(s, SketchParams::circle(4, 1.0, 0.0).unwrap());
        assert_eq!(report.rows.len(), 1);
    }

    #[test]
    fn sketch_gradient_matches_finite_differences() {
        let target = ScalarField::sample2(Grid::square(15, -1.5, 1.5).unwrap(), |p| {
            (((p.x / 1.2).powi(2) + (p.y / 0.8).powi(2)).sqrt() - 1.0).abs()
        });
        for mode in [Continuity::C0, Continuity::C1] {
            let cfg = FitConfig {
                continuity: mode,
                samples_per_curve: 30,
                lambda_w_2d: 0.1,
                ..FitConfig::default()
            };
            let obj = SketchObjective::new(&target, &cfg).unwrap();
            let x: Vec<f64> = (0..obj.dim())
                .map(|i| 0.15 * ((i * 5 % 7) as f64 / 7.0 - 0.4))
                .collect();
            let (ta, ga) = gradient(&obj, &x, GradientMode::Analytic, 1e-5).unwrap();
            let (tf, gf) = gradient(&obj, &x, GradientMode::FiniteDifference, 1e-5).unwrap();
            assert_eq!(ta, tf);
            for i in 0..x.len() {
                let scale = gf[i].abs().max(1e-3);
                assert!(
                    (ga[i] - gf[i]).abs() / scale < 1e-3,
                    "{mode:?} var {i}: {} vs {}",
                    ga[i],
                    gf[i]
                );
            }
        }
    }

    #[test]
    fn shape_gradient_matches_finite_differences() {
        let grid = Grid::cube(9, [-1.2; 3], [1.2; 3]).unwrap();
        let points = grid.points3();
        let target: Vec<f64> = points
            .iter()
            .map(|p| f64::from(p.x.abs() < 0.7 && p.y.abs() < 0.5 && p.z.abs() < 0.6))
            .collect();
        let cfg = FitConfig {
            samples_per_curve: 24,
            eta: 4.0,
            lambda_p: 0.5,
            lambda_w: 0.2,
            ..FitConfig::default()
        };
        let init = initial_model(2, 2, ([-0.7, -0.5, -0.6], [0.7, 0.5, 0.6]), &cfg, 3).unwrap();
        let layout = ModelLayout::of(&init).unwrap();
        let x = layout.encode(&init).unwrap();
        let obj = ShapeObjective::new(layout, points, target, &cfg).unwrap();
        let (_, ga) = gradient(&obj, &x, GradientMode::Analytic, 1e-5).unwrap();
        let (_, gf) = gradient(&obj, &x, GradientMode::FiniteDifference, 1e-5).unwrap();
        let gmax = gf.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for i in 0..x.len() {
            let scale = gf[i].abs().max(1e-3 * gmax);
            assert!(
                (ga[i] - gf[i]).abs() / scale < 1e-3,
                "var {i}: {} vs {}",
                ga[i],
                gf[i]
            );
        }
    }

    #[test]
    fn stationary_points_have_zero_gradient() {
        // recon with prediction equal to target, and unit weights
        let grid = Grid::cube(6, [-1.0; 3], [1.0; 3]).unwrap();
        let cfg = FitConfig {
            samples_per_curve: 20,
            lambda_p: 0.0,
            lambda_w: 1.0,
            ..FitConfig::default()
        };
        let mut init = initial_model(1, 1, ([-0.5; 3], [0.5; 3]), &cfg, 1).unwrap();
        let p = init.primitives()[0].clone();
        let unit = SketchParams::new(
            4,
            Continuity::C0,
            p.sketch.radii().to_vec(),
            vec![1.0; 8],
            p.sketch.start_angle(),
        )
        .unwrap();
        init = ShapeModel::new(
            vec![ExtrusionParams::new(unit, p.pose, p.height).unwrap()],
            init.stump().clone(),
            cfg.eta,
        )
        .unwrap();
        let points = grid.points3();
        let target = init.occupancy(&points, 20).unwrap();
        let layout = ModelLayout::of(&init).unwrap();
        let x = layout.encode(&init).unwrap();
        let obj = ShapeObjective::new(layout, points, target, &cfg).unwrap();
        let (terms, g) = obj.loss_and_gradient(&x).unwrap();
        assert!(terms.recon < 1e-28);
        assert_eq!(terms.weight_reg, 0.0);
        assert!(g.iter().all(|v| v.abs() < 1e-12), "{g:?}");
    }

    #[test]
    fn loss_decomposition_and_determinism() {
        let grid = Grid::cube(8, [-1.0; 3], [1.0; 3]).unwrap();
        let target = ScalarField::sample3(grid, |p| f64::from(p.norm() < 0.7));
        let cfg = FitConfig {
            iterations: 5,
            restarts: 1,
            samples_per_curve: 20,
            ..FitConfig::default()
        };
        let a = fit_shapes_3d(&target, 2, 2, &cfg).unwrap();
        let b = fit_shapes_3d(&target, 2, 2, &cfg).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.report.rows.len(), 6);
        for r in &a.report.rows {
            let t = r.recon + cfg.lambda_p * r.prim + cfg.lambda_w * r.weight_reg;
            assert!((t - r.total).abs() < 1e-10);
        }
        assert!(a.hard.is_hard());
        let csv = a.report.to_csv();
        assert!(csv.starts_with("iteration,recon,prim,weight_reg,total\n"));
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn identical_target_starts_at_regularizers() {
        let grid = Grid::cube(8, [-1.0; 3], [1.0; 3]).unwrap();
        let cfg = FitConfig {
            iterations: 0,
            samples_per_curve: 20,
            ..FitConfig::default()
        };
        let init = initial_model(2, 2, ([-0.6; 3], [0.6; 3]), &cfg, 9).unwrap();
        let points = grid.points3();
        let target = init.occupancy(&points, 20).unwrap();
        let (_, report) = fit_model(&init, points.clone(), target, &cfg).unwrap();
        let r = report.rows[0];
        assert!(r.recon < 1e-20);
        let prims = init.primitives();
        let expect = cfg.lambda_w
            * loss_weight_reg(&prims.iter().map(|p| &p.sketch).collect::<Vec<_>>())
            + cfg.lambda_p * loss_primitive(prims, &points, 20).unwrap();
        assert!((r.total - expect).abs() < 1e-12, "{} vs {expect}", r.total);
    }
}
