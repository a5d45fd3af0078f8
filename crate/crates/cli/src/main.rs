//! Command-line front end: fitting, evaluation, binarization, export,
//! metrics and the built-in oracle self-test.

mod commands;
mod failure;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::failure::Failure;

#[derive(Parser, Debug)]
#[command(
    name = "extrudekit",
    version,
    about = "Differentiable sketch-and-extrude shape fitting"
)]
struct Cli {
    /// Worker threads for parallel sections (defaults to all cores).
    #[arg(long, global = true, env = "EXTRUDEKIT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a single sketch to a 2D unsigned distance field.
    Fit2d(Fit2dArgs),
    /// Fit K extrusions combined by a CSG-Stump to a 3D occupancy target.
    Fit3d(Fit3dArgs),
    /// Sample a model's signed field (or occupancy) on a regular grid.
    EvalSdf(EvalSdfArgs),
    /// Threshold a soft model's CSG-Stump selections.
    Binarize(BinarizeArgs),
    /// Write a model as an OpenSCAD script or a triangle mesh.
    Export(ExportArgs),
    /// Compare a prediction with a ground truth: chamfer distance, IoU, F1.
    Metrics(MetricsArgs),
    /// Run the built-in oracle suites.
    Selftest(SelftestArgs),
}

/// Fitting options shared by `fit2d` and `fit3d`; flags override values
/// read from `--config`.
#[derive(Args, Debug, Clone)]
struct FitFlags {
    /// TOML file with fitting hyper-parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Curves per sketch.
    #[arg(long)]
    curves: Option<usize>,
    #[arg(long, value_enum)]
    continuity: Option<ContinuityArg>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Occupancy sharpness.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    lambda_p: Option<f64>,
    #[arg(long)]
    lambda_w: Option<f64>,
    /// Sketch samples per curve used by the distance queries.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_enum)]
    gradient: Option<GradientArg>,
    /// Gaussian noise on the initial sketch variables.
    #[arg(long)]
    init_noise: Option<f64>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ContinuityArg {
    C0,
    C1,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum GradientArg {
    Analytic,
    Fd,
}

#[derive(Args, Debug)]
struct Fit2dArgs {
    /// 2D grid file holding the target distance field.
    #[arg(long)]
    target: PathBuf,
    #[command(flatten)]
    fit: FitFlags,
    /// Output sketch file.
    #[arg(long, default_value = "sketch.json")]
    out: PathBuf,
    /// Output loss history.
    #[arg(long, default_value = "loss.csv")]
    loss: PathBuf,
}

#[derive(Args, Debug)]
struct Fit3dArgs {
    /// 3D occupancy grid (`.grid`) or surface point cloud (`.xyz`, `.ply`).
    #[arg(long)]
    target: PathBuf,
    /// Number of primitives K.
    #[arg(long, default_value_t = 4)]
    prims: usize,
    /// Number of intersection nodes J.
    #[arg(long, default_value_t = 4)]
    nodes: usize,
    #[arg(long)]
    restarts: Option<usize>,
    /// Grid resolution used to voxelize point-cloud targets.
    #[arg(long, default_value_t = 32)]
    resolution: usize,
    /// Padding per side of the voxelization grid, as a fraction of the extent.
    #[arg(long, default_value_t = extrudekit::shapeio::DEFAULT_PADDING)]
    padding: f64,
    #[command(flatten)]
    fit: FitFlags,
    #[arg(long, default_value = "soft.json")]
    out_soft: PathBuf,
    #[arg(long, default_value = "hard.json")]
    out_hard: PathBuf,
    #[arg(long, default_value = "loss.csv")]
    loss: PathBuf,
}

/// Grid placement shared by commands that rasterize a model.
#[derive(Args, Debug, Clone)]
struct GridFlags {
    /// Nodes per axis.
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    /// Lower corner, comma separated; defaults to the padded model bounds.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        requires = "max"
    )]
    min: Option<Vec<f64>>,
    /// Upper corner, comma separated.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        requires = "min"
    )]
    max: Option<Vec<f64>>,
    /// Padding per side around the model bounds.
    #[arg(long, default_value_t = extrudekit::shapeio::DEFAULT_PADDING)]
    padding: f64,
    /// Sketch samples per curve.
    #[arg(long, default_value_t = 100)]
    samples: usize,
}

#[derive(Args, Debug)]
struct EvalSdfArgs {
    /// Shape model or sketch file.
    model: PathBuf,
    #[command(flatten)]
    grid: GridFlags,
    /// Write occupancy instead of the signed field.
    #[arg(long)]
    occupancy: bool,
    #[arg(long, default_value = "field.grid")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BinarizeArgs {
    model: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value = "hard.json")]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ExportFormat {
    Scad,
    Stl,
    Obj,
}

#[derive(Args, Debug)]
struct ExportArgs {
    model: PathBuf,
    #[arg(long, value_enum)]
    format: ExportFormat,
    /// Output file; defaults to the model path with the format's extension.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Polygon points per sketch curve in CAD scripts.
    #[arg(long, default_value_t = 50)]
    polyline_samples: usize,
    /// Re-rasterize the written script and require IoU ≥ 0.99 against the
    /// model's own occupancy.
    #[arg(long)]
    verify: bool,
    #[command(flatten)]
    grid: GridFlags,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// Predicted shape: model (`.json`) or occupancy grid (`.grid`).
    #[arg(long)]
    pred: PathBuf,
    /// Ground truth: model (`.json`) or occupancy grid (`.grid`).
    #[arg(long)]
    gt: PathBuf,
    /// Surface samples per shape.
    #[arg(long, default_value_t = 10_000)]
    surface_samples: usize,
    /// F1 distance threshold; defaults to 2% of the ground-truth diagonal.
    #[arg(long)]
    f1_threshold: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    grid: GridFlags,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    /// Random configurations per property suite.
    #[arg(long, default_value_t = 100)]
    cases: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot size the thread pool: {e}")))?;
    }
    match cli.command {
        Command::Fit2d(a) => commands::fit2d(&a),
        Command::Fit3d(a) => commands::fit3d(&a),
        Command::EvalSdf(a) => commands::eval_sdf(&a),
        Command::Binarize(a) => commands::binarize(&a),
        Command::Export(a) => commands::export(&a),
        Command::Metrics(a) => commands::metrics(&a),
        Command::Selftest(a) => selftest::run(a.cases, a.seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return Failure::usage(e.to_string().trim()).report(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}
