//! Implementations of the data-processing subcommands.

use std::path::{Path, PathBuf};

use extrudekit::field::{Grid, Layout, ScalarField};
use extrudekit::fit::{fit_shapes_3d, fit_sketch_2d, FitConfig, GradientMode, LossReport};
use extrudekit::model::ShapeModel;
use extrudekit::sdf2d::SampledSketch;
use extrudekit::shapeio::{
    export_scad, marching_cubes, metrics as shape_metrics, model_bounds, parse_scad, testing_grid,
    volumetric_iou, voxelize, Aabb, Mesh, PointCloud,
};
use extrudekit::sketch::{Continuity, SketchParams};
use log::{info, warn};
use nalgebra::Vector2;

use crate::failure::{Failure, Kind};
use crate::{
    BinarizeArgs, ContinuityArg, EvalSdfArgs, ExportArgs, ExportFormat, Fit2dArgs, Fit3dArgs,
    FitFlags, GradientArg, GridFlags, MetricsArgs,
};

/// Minimum IoU between an exported script and the model it came from.
const EXPORT_IOU: f64 = 0.99;

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| {
        extrudekit::Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| {
        extrudekit::Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn require_file(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::new(
            Kind::Io,
            format!("{}: no such file", path.display()),
        ))
    }
}

/// Fitting configuration from `--config` with flag overrides applied.
fn fit_config(flags: &FitFlags) -> Result<FitConfig, Failure> {
    let mut cfg = match &flags.config {
        Some(path) => {
            require_file(path)?;
            toml::from_str::<FitConfig>(&read_text(path)?)
                .map_err(|e| Failure::config(format!("{}: {}", path.display(), e.message())))?
        }
        None => FitConfig::default(),
    };
    if let Some(v) = flags.curves {
        cfg.n_curves = v;
    }
    if let Some(v) = flags.continuity {
        cfg.continuity = match v {
            ContinuityArg::C0 => Continuity::C0,
            ContinuityArg::C1 => Continuity::C1,
        };
    }
    if let Some(v) = flags.iters {
        cfg.iterations = v;
    }
    if let Some(v) = flags.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.eta {
        cfg.eta = v;
    }
    if let Some(v) = flags.lambda_p {
        cfg.lambda_p = v;
    }
    if let Some(v) = flags.lambda_w {
        cfg.lambda_w = v;
    }
    if let Some(v) = flags.samples {
        cfg.samples_per_curve = v;
    }
    if let Some(v) = flags.gradient {
        cfg.gradient_mode = match v {
            GradientArg::Analytic => GradientMode::Analytic,
            GradientArg::Fd => GradientMode::FiniteDifference,
        };
    }
    if let Some(v) = flags.init_noise {
        cfg.init_noise = v;
    }
    Ok(cfg)
}

fn validated(cfg: FitConfig) -> Result<FitConfig, Failure> {
    cfg.validate().map_err(|e| Failure::config(e.to_string()))?;
    Ok(cfg)
}

fn log_report(report: &LossReport) {
    if let (Some(first), Some(last)) = (report.first(), report.last()) {
        info!(
            "loss {:.6e} -> {:.6e} over {} iterations",
            first.total, last.total, last.iteration
        );
    }
}

pub fn fit2d(args: &Fit2dArgs) -> Result<(), Failure> {
    let cfg = validated(fit_config(&args.fit)?)?;
    require_file(&args.target)?;
    let target = ScalarField::load(&args.target)?;
    if target.grid().map(Grid::dim) != Some(2) {
        return Err(Failure::new(Kind::Invalid, "fit2d needs a 2D grid target"));
    }
    info!(
        "fitting a {}-curve sketch for {} iterations",
        cfg.n_curves, cfg.iterations
    );
    let (sketch, report) = fit_sketch_2d(&target, &cfg)?;
    log_report(&report);
    write_file(&args.out, sketch_json(&sketch)?)?;
    write_file(&args.loss, report.to_csv())?;
    info!("wrote {} and {}", args.out.display(), args.loss.display());
    Ok(())
}

fn sketch_json(sketch: &SketchParams) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(sketch).map_err(extrudekit::Error::from)?;
    s.push('\n');
    Ok(s)
}

fn has_extension(path: &Path, exts: &[&str]) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

pub fn fit3d(args: &Fit3dArgs) -> Result<(), Failure> {
    let mut cfg = fit_config(&args.fit)?;
    if let Some(r) = args.restarts {
        cfg.restarts = r;
    }
    let cfg = validated(cfg)?;
    if args.prims == 0 || args.nodes == 0 {
        return Err(Failure::new(
            Kind::Invalid,
            "--prims and --nodes must be at least 1",
        ));
    }
    require_file(&args.target)?;
    let target = if has_extension(&args.target, &["xyz", "ply"]) {
        let cloud = PointCloud::load(&args.target)?;
        let bbox = Aabb::of_points(&cloud.points)?;
        let grid = testing_grid(&bbox, args.resolution, args.padding)?;
        info!(
            "voxelized {} points on a {}³ grid",
            cloud.len(),
            args.resolution
        );
        voxelize(&cloud, &grid)?
    } else {
        ScalarField::load(&args.target)?
    };
    info!(
        "fitting K={} J={} with {} restarts of {} iterations",
        args.prims, args.nodes, cfg.restarts, cfg.iterations
    );
    let fit = fit_shapes_3d(&target, args.prims, args.nodes, &cfg)?;
    info!(
        "restart {} won with losses {:?}",
        fit.restart, fit.restart_losses
    );
    log_report(&fit.report);
    fit.soft.save(&args.out_soft)?;
    fit.hard.save(&args.out_hard)?;
    write_file(&args.loss, fit.report.to_csv())?;
    Ok(())
}

/// A model file holds either a full shape model or a single sketch.
enum Loaded {
    Shape(ShapeModel),
    Sketch(SketchParams),
}

fn load_any(path: &Path) -> Result<Loaded, Failure> {
    require_file(path)?;
    let text = read_text(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| extrudekit::Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
    if value.get("primitives").is_some() {
        Ok(Loaded::Shape(ShapeModel::load(path)?))
    } else {
        let sketch = serde_json::from_value(value).map_err(|e| extrudekit::Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: e.to_string(),
        })?;
        Ok(Loaded::Sketch(sketch))
    }
}

fn load_shape(path: &Path) -> Result<ShapeModel, Failure> {
    match load_any(path)? {
        Loaded::Shape(m) => Ok(m),
        Loaded::Sketch(_) => Err(Failure::new(
            Kind::Invalid,
            format!("{} holds a sketch, not a shape model", path.display()),
        )),
    }
}

/// Explicit `--min/--max` corners, if given, checked against `dim`.
fn explicit_corners(
    flags: &GridFlags,
    dim: usize,
) -> Result<Option<(Vec<f64>, Vec<f64>)>, Failure> {
    match (&flags.min, &flags.max) {
        (Some(lo), Some(hi)) => {
            if lo.len() != dim || hi.len() != dim {
                return Err(Failure::usage(format!(
                    "--min and --max need {dim} comma-separated values"
                )));
            }
            Ok(Some((lo.clone(), hi.clone())))
        }
        _ => Ok(None),
    }
}

fn grid3(
    flags: &GridFlags,
    bounds: impl FnOnce() -> Result<Aabb, Failure>,
) -> Result<Grid, Failure> {
    match explicit_corners(flags, 3)? {
        Some((lo, hi)) => Ok(Grid::new(vec![flags.resolution; 3], lo, hi)?),
        None => Ok(testing_grid(&bounds()?, flags.resolution, flags.padding)?),
    }
}

fn shape_grid(flags: &GridFlags, model: &ShapeModel) -> Result<Grid, Failure> {
    grid3(flags, || {
        model_bounds(model, flags.samples).map_err(|_| {
            Failure::new(
                Kind::Invalid,
                "the model has no primitives; pass --min and --max explicitly",
            )
        })
    })
}

pub fn eval_sdf(args: &EvalSdfArgs) -> Result<(), Failure> {
    let field = match load_any(&args.model)? {
        Loaded::Shape(model) => {
            let grid = shape_grid(&args.grid, &model)?;
            if args.occupancy {
                model.occupancy_grid(&grid, args.grid.samples)?
            } else {
                model.surface_field(&grid, args.grid.samples)?
            }
        }
        Loaded::Sketch(sketch) => {
            let sampled = SampledSketch::from_curve(&sketch.polygon(), args.grid.samples)?;
            let (lo, hi) = match explicit_corners(&args.grid, 2)? {
                Some(c) => c,
                None => {
                    let pts = sampled.samples();
                    let lo = pts
                        .iter()
                        .fold(Vector2::repeat(f64::INFINITY), |a, p| a.inf(p));
                    let hi = pts
                        .iter()
                        .fold(Vector2::repeat(f64::NEG_INFINITY), |a, p| a.sup(p));
                    let pad = (hi - lo) * args.grid.padding;
                    (
                        (lo - pad).as_slice().to_vec(),
                        (hi + pad).as_slice().to_vec(),
                    )
                }
            };
            let grid = Grid::new(vec![args.grid.resolution; 2], lo, hi)?;
            let mut field = sampled.sample_field(Layout::Grid(grid))?;
            if args.occupancy {
                field
                    .values
                    .iter_mut()
                    .for_each(|v| *v = f64::from(*v >= 0.0));
            }
            field
        }
    };
    field.save(&args.out)?;
    info!("wrote {} values to {}", field.len(), args.out.display());
    Ok(())
}

pub fn binarize(args: &BinarizeArgs) -> Result<(), Failure> {
    let model = load_shape(&args.model)?;
    let hard = model.binarize(args.threshold)?;
    hard.save(&args.out)?;
    info!("wrote {}", args.out.display());
    Ok(())
}

pub fn export(args: &ExportArgs) -> Result<(), Failure> {
    let model = load_shape(&args.model)?;
    let out = args.out.clone().unwrap_or_else(|| {
        let mut p = PathBuf::from(&args.model);
        p.set_extension(match args.format {
            ExportFormat::Scad => "scad",
            ExportFormat::Stl => "stl",
            ExportFormat::Obj => "obj",
        });
        p
    });
    match args.format {
        ExportFormat::Scad => {
            let script = export_scad(&model, args.polyline_samples)?;
            write_file(&out, &script)?;
            if args.verify {
                let grid = shape_grid(&args.grid, &model)?;
                let exported = parse_scad(&script)?.rasterize(&grid)?;
                let internal = model.occupancy_grid(&grid, args.grid.samples)?;
                let iou = volumetric_iou(&exported, &internal)?;
                println!("export IoU={iou:.6}");
                if iou < EXPORT_IOU {
                    return Err(Failure::check(format!(
                        "exported script IoU {iou:.6} is below {EXPORT_IOU}"
                    )));
                }
            }
        }
        ExportFormat::Stl | ExportFormat::Obj => {
            if args.verify {
                return Err(Failure::usage("--verify applies to scad exports only"));
            }
            let grid = shape_grid(&args.grid, &model)?;
            let mesh = marching_cubes(&model.surface_field(&grid, args.grid.samples)?, 0.0)?;
            if mesh.is_empty() {
                warn!("the model has an empty surface on the chosen grid");
            }
            mesh.save(&out)?;
        }
    }
    info!("wrote {}", out.display());
    Ok(())
}

/// One side of a metrics comparison.
enum Shape {
    Model(ShapeModel),
    Occupancy(ScalarField),
}

fn load_metric_side(path: &Path) -> Result<Shape, Failure> {
    require_file(path)?;
    if has_extension(path, &["grid"]) {
        let field = ScalarField::load(path)?;
        if field.grid().map(Grid::dim) != Some(3) {
            return Err(Failure::new(
                Kind::Invalid,
                format!("{} is not a 3D grid", path.display()),
            ));
        }
        Ok(Shape::Occupancy(field))
    } else {
        Ok(Shape::Model(load_shape(path)?))
    }
}

fn rasterize(shape: &Shape, grid: &Grid, samples: usize) -> Result<(Mesh, ScalarField), Failure> {
    match shape {
        Shape::Occupancy(field) => {
            if field.grid() != Some(grid) {
                return Err(Failure::new(
                    Kind::Invalid,
                    "occupancy grids must share one layout",
                ));
            }
            Ok((marching_cubes(field, 0.5)?, field.clone()))
        }
        Shape::Model(model) => {
            let mesh = marching_cubes(&model.surface_field(grid, samples)?, 0.0)?;
            Ok((mesh, model.occupancy_grid(grid, samples)?))
        }
    }
}

pub fn metrics(args: &MetricsArgs) -> Result<(), Failure> {
    let pred = load_metric_side(&args.pred)?;
    let gt = load_metric_side(&args.gt)?;
    let grid = match (&pred, &gt) {
        (_, Shape::Occupancy(f)) | (Shape::Occupancy(f), _) => {
            f.grid().expect("checked on load").clone()
        }
        (_, Shape::Model(m)) => shape_grid(&args.grid, m)?,
    };
    let (pm, pf) = rasterize(&pred, &grid, args.grid.samples)?;
    let (gm, gf) = rasterize(&gt, &grid, args.grid.samples)?;
    let report = shape_metrics(
        (&pm, &pf),
        (&gm, &gf),
        args.surface_samples,
        args.f1_threshold,
        args.seed,
    )?;
    println!("{}", report.line());
    info!(
        "raw chamfer {:.6e}, F1 threshold {:.6}",
        report.chamfer.raw, report.f1_threshold
    );
    Ok(())
}
