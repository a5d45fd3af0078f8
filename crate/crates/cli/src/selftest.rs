//! Built-in oracle suites: closed-form circles, star-shapedness, C¹
//! stitching, distance-field convergence, gradient agreement with finite
//! differences, CSG-Stump boolean equivalence, isosurface accuracy, export
//! fidelity and model serialization.

use std::f64::consts::PI;
use std::time::Instant;

use extrudekit::extrude::{ExtrusionParams, RigidPose};
use extrudekit::field::{Grid, Layout, ScalarField};
use extrudekit::fit::{
    gradient, initial_model, FitConfig, GradientMode, Objective, ShapeObjective, SketchObjective,
};
use extrudekit::model::{ModelLayout, ShapeModel};
use extrudekit::sdf2d::sample_sketch;
use extrudekit::shapeio::{export_fidelity, marching_cubes};
use extrudekit::sketch::{eval_curve, eval_derivative, Continuity, SketchParams};
use extrudekit::stump::{StumpMode, StumpParams};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::failure::Failure;

type Outcome = Result<String, String>;

pub fn run(cases: usize, seed: u64) -> Result<(), Failure> {
    if cases == 0 {
        return Err(Failure::usage("--cases must be at least 1"));
    }
    let suites: [(&str, fn(usize, &mut ChaCha8Rng) -> Outcome); 9] = [
        ("circle-recovery", circle_recovery),
        ("star-shaped", star_shaped),
        ("c1-stitching", c1_stitching),
        ("sdf-convergence", sdf_convergence),
        ("gradients", gradients),
        ("stump-boolean", stump_boolean),
        ("isosurface", isosurface),
        ("export-fidelity", export_check),
        ("model-round-trip", round_trip),
    ];
    let mut failed = Vec::new();
    for (i, (name, suite)) in suites.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let start = Instant::now();
        let outcome = suite(cases, &mut rng);
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.2}s): {detail}"),
            Err(detail) => {
                println!("FAIL {name} ({secs:.2}s): {detail}");
                failed.push(*name);
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::check(format!(
            "self-test suites failed: {}",
            failed.join(", ")
        )))
    }
}

fn err(e: extrudekit::Error) -> String {
    e.to_string()
}

fn random_sketch(rng: &mut ChaCha8Rng, mode: Continuity) -> Result<SketchParams, String> {
    let n = rng.gen_range(2..=8);
    let values: Vec<f64> = (0..mode.free_count(n))
        .map(|_| rng.gen_range(-0.7..0.7))
        .collect();
    SketchParams::from_unconstrained(n, mode, rng.gen_range(-PI..PI), &values).map_err(err)
}

fn circle_recovery(_: usize, _: &mut ChaCha8Rng) -> Outcome {
    let mut worst = 0.0f64;
    for n in [3, 4, 6, 8] {
        let rho = 1.7;
        let s = SketchParams::circle(n, rho, 0.3).map_err(err)?;
        for k in 0..n {
            for i in 0..=2500 {
                let r = eval_curve(&s, k, i as f64 / 2500.0).map_err(err)?.norm();
                worst = worst.max((r - rho).abs() / rho);
            }
        }
    }
    if worst <= 1e-9 {
        Ok(format!("max relative radius error {worst:.2e}"))
    } else {
        Err(format!("relative radius error {worst:.2e} exceeds 1e-9"))
    }
}

fn star_shaped(cases: usize, rng: &mut ChaCha8Rng) -> Outcome {
    for case in 0..cases {
        let s = random_sketch(rng, Continuity::C0)?;
        let sampled = sample_sketch(&s, 50).map_err(err)?;
        let pts = sampled.samples();
        let mut sweep = 0.0;
        for (i, a) in pts.iter().enumerate() {
            let b = pts[(i + 1) % pts.len()];
            let d = (a.x * b.y - a.y * b.x).atan2(a.dot(&b));
            if d < 0.0 {
                return Err(format!("case {case}: polar angle decreases at sample {i}"));
            }
            sweep += d;
        }
        if (sweep - 2.0 * PI).abs() > 1e-9 {
            return Err(format!("case {case}: polar sweep {sweep}"));
        }
    }
    Ok(format!("{cases} random sketches"))
}

fn c1_stitching(cases: usize, rng: &mut ChaCha8Rng) -> Outcome {
    let mut worst = 0.0f64;
    for case in 0..cases {
        let s = random_sketch(rng, Continuity::C1)?;
        let n = s.n_curves();
        for k in 0..n {
            let a = eval_derivative(&s, k, 1.0).map_err(err)?;
            let b = eval_derivative(&s, (k + 1) % n, 0.0).map_err(err)?;
            let rel = (a - b).norm() / a.norm().max(b.norm());
            if rel > 1e-9 {
                return Err(format!(
                    "case {case} joint {k}: relative mismatch {rel:.2e}"
                ));
            }
            worst = worst.max(rel);
        }
    }
    Ok(format!("{cases} random C1 sketches, worst {worst:.2e}"))
}

fn sdf_convergence(_: usize, _: &mut ChaCha8Rng) -> Outcome {
    let grid = Grid::square(101, -1.5, 1.5).map_err(err)?;
    let exact: Vec<f64> = grid.points2().iter().map(|p| 1.0 - p.norm()).collect();
    let circle = SketchParams::circle(4, 1.0, 0.0).map_err(err)?;
    let mut prev = f64::INFINITY;
    let mut last = 0.0;
    for n in [20, 40, 80, 160, 400] {
        let f = sample_sketch(&circle, n)
            .map_err(err)?
            .sample_field(Layout::Grid(grid.clone()))
            .map_err(err)?;
        let e = f
            .values
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if e >= prev {
            return Err(format!(
                "error did not decrease at n={n}: {e:.3e} ≥ {prev:.3e}"
            ));
        }
        prev = e;
        last = e;
    }
    if last <= 1e-4 {
        Ok(format!("max error {last:.2e} at n=400"))
    } else {
        Err(format!("max error {last:.2e} at n=400 exceeds 1e-4"))
    }
}

/// Largest per-variable relative error, with a floor of `1e-3 · max|g|`.
fn gradient_error(obj: &dyn Objective, x: &[f64]) -> Result<f64, String> {
    let (_, ga) = gradient(obj, x, GradientMode::Analytic, 1e-5).map_err(err)?;
    let (_, gf) = gradient(obj, x, GradientMode::FiniteDifference, 1e-5).map_err(err)?;
    let gmax = gf.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-12);
    Ok(ga
        .iter()
        .zip(&gf)
        .map(|(a, f)| (a - f).abs() / f.abs().max(1e-3 * gmax))
        .fold(0.0, f64::max))
}

fn gradients(cases: usize, rng: &mut ChaCha8Rng) -> Outcome {
    let runs = cases.min(10);
    let mut worst = 0.0f64;
    let target2 = ScalarField::sample2(Grid::square(13, -1.5, 1.5).map_err(err)?, |p| {
        (((p.x / 1.2).powi(2) + (p.y / 0.8).powi(2)).sqrt() - 1.0).abs()
    });
    // scattered points: grid nodes can sit exactly on the ties of the
    // extrusion distance's min/max terms, where it is not differentiable
    let points: Vec<Vector3<f64>> = (0..343)
        .map(|_| Vector3::from_fn(|_, _| rng.gen_range(-1.2..1.2)))
        .collect();
    for case in 0..runs {
        let mode = if case % 2 == 0 {
            Continuity::C0
        } else {
            Continuity::C1
        };
        let cfg = FitConfig {
            continuity: mode,
            samples_per_curve: 24,
            lambda_w_2d: 0.1,
            ..FitConfig::default()
        };
        let obj = SketchObjective::new(&target2, &cfg).map_err(err)?;
        let x: Vec<f64> = (0..obj.dim()).map(|_| rng.gen_range(-0.1..0.1)).collect();
        worst = worst.max(gradient_error(&obj, &x)?);

        let half = [
            rng.gen_range(0.3..0.8),
            rng.gen_range(0.3..0.8),
            rng.gen_range(0.3..0.8),
        ];
        let target: Vec<f64> = points
            .iter()
            .map(|p| f64::from((0..3).all(|a| p[a].abs() < half[a])))
            .collect();
        let cfg = FitConfig {
            samples_per_curve: 20,
            eta: 4.0,
            lambda_p: 0.5,
            lambda_w: 0.2,
            ..FitConfig::default()
        };
        let lo = half.map(|h| -h);
        let init = initial_model(2, 2, (lo, half), &cfg, rng.gen()).map_err(err)?;
        let layout = ModelLayout::of(&init).map_err(err)?;
        let x = layout.encode(&init).map_err(err)?;
        let obj = ShapeObjective::new(layout, points.clone(), target, &cfg).map_err(err)?;
        worst = worst.max(gradient_error(&obj, &x)?);
    }
    if worst <= 1e-3 {
        Ok(format!(
            "{runs} sketch and {runs} shape configurations, worst relative error {worst:.2e}"
        ))
    } else {
        Err(format!("relative gradient error {worst:.2e} exceeds 1e-3"))
    }
}

fn random_binary(rng: &mut ChaCha8Rng, k: usize, j: usize) -> Result<StumpParams, String> {
    let mut bit = |p: f64| f64::from(rng.gen_bool(p));
    let c = (0..k).map(|_| bit(0.5)).collect();
    let s = (0..k * j).map(|_| bit(0.4)).collect();
    let u = (0..j).map(|_| bit(0.7)).collect();
    StumpParams::new(c, s, u, StumpMode::Hard).map_err(err)
}

/// Direct boolean reading of a hard stump: a node is the intersection of
/// its selected (possibly complemented) primitives, or empty when none is
/// selected; the shape is the union of the selected nodes.
fn oracle(stump: &StumpParams, inside: &[bool]) -> bool {
    (0..stump.n_nodes()).any(|j| {
        let selected: Vec<usize> = (0..stump.n_prims())
            .filter(|&k| stump.select(k, j) == 1.0)
            .collect();
        stump.union_select()[j] == 1.0
            && !selected.is_empty()
            && selected
                .iter()
                .all(|&k| inside[k] != (stump.complement()[k] == 1.0))
    })
}

fn stump_boolean(cases: usize, rng: &mut ChaCha8Rng) -> Outcome {
    for case in 0..cases {
        let k = rng.gen_range(1..=8);
        let j = rng.gen_range(1..=8);
        let stump = random_binary(rng, k, j)?;
        let tree = stump.extract_csg().map_err(err)?;
        for mask in 0u32..(1 << k) {
            let inside: Vec<bool> = (0..k).map(|b| mask >> b & 1 == 1).collect();
            let occ: Vec<f64> = inside.iter().map(|&b| f64::from(b)).collect();
            let expected = oracle(&stump, &inside);
            if (stump.evaluate_point(&occ) == 1.0) != expected || tree.contains(&inside) != expected
            {
                return Err(format!(
                    "case {case} (K={k}, J={j}) disagrees at assignment {mask:#b}"
                ));
            }
        }
    }
    Ok(format!("{cases} random binary stumps, all assignments"))
}

fn isosurface(_: usize, _: &mut ChaCha8Rng) -> Outcome {
    let grid = Grid::cube(48, [-1.0; 3], [1.0; 3]).map_err(err)?;
    let cell = grid.spacing(0);
    let mesh = marching_cubes(&ScalarField::sample3(grid, |p| 0.7 - p.norm()), 0.0).map_err(err)?;
    let worst = mesh
        .vertices
        .iter()
        .map(|v| (v.norm() - 0.7).abs())
        .fold(0.0, f64::max);
    if worst <= 1.5 * cell {
        Ok(format!("sphere vertices within {:.3} cells", worst / cell))
    } else {
        Err(format!(
            "sphere vertex error {:.3} cells exceeds 1.5",
            worst / cell
        ))
    }
}

fn random_model(rng: &mut ChaCha8Rng, k: usize, j: usize) -> Result<ShapeModel, String> {
    let prims = (0..k)
        .map(|_| {
            let sketch = random_sketch(rng, Continuity::C0)?;
            let axis = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.2..1.0),
            );
            let t = Vector3::new(
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.6..-0.2),
            );
            let pose =
                RigidPose::from_axis_angle(axis, rng.gen_range(-1.0..1.0), t).map_err(err)?;
            ExtrusionParams::new(sketch, pose, rng.gen_range(0.4..1.2)).map_err(err)
        })
        .collect::<Result<Vec<_>, String>>()?;
    let stump = random_binary(rng, k, j)?;
    ShapeModel::new(prims, stump, 100.0).map_err(err)
}

fn export_check(cases: usize, rng: &mut ChaCha8Rng) -> Outcome {
    let runs = cases.min(5);
    let grid = Grid::cube(48, [-2.5; 3], [2.5; 3]).map_err(err)?;
    let mut worst = 1.0f64;
    for _ in 0..runs {
        let model = random_model(rng, 3, 2)?;
        worst = worst.min(export_fidelity(&model, 100, &grid, 100).map_err(err)?);
    }
    if worst >= 0.99 {
        Ok(format!("{runs} random hard models, lowest IoU {worst:.4}"))
    } else {
        Err(format!("exported script IoU {worst:.4} is below 0.99"))
    }
}

fn round_trip(cases: usize, rng: &mut ChaCha8Rng) -> Outcome {
    for case in 0..cases {
        let (k, j) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let model = random_model(rng, k, j)?;
        let text = model.to_json().map_err(err)?;
        let back = ShapeModel::from_json(&text).map_err(err)?;
        if back != model || back.to_json().map_err(err)? != text {
            return Err(format!("case {case} does not round-trip"));
        }
    }
    Ok(format!("{cases} random models re-serialize identically"))
}
