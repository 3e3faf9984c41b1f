//! `specflow` command-line front end.

mod evaluate;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use specflow::config::{RunConfig, Units};
use specflow::cube::{read_pgm, save_cube};
use specflow::experiment::{self, generate, FlowKind, Scenario};
use specflow::metrics::{compare_fields, default_border, Field};
use specflow::solve::SolveMethod;
use specflow::spectral::{grid_csv, save_velocity, SpectralVelocity};
use specflow::synth::{Boundary, Interpolation};
use specflow::{load_cube, FlowError, ImageCube, MissingPolicy, SolveReport};

use output::{emit, write_json, write_text};

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Flow(FlowError),
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        CliError::Flow(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Flow(e) => match e {
                FlowError::Argument(_) => 2,
                FlowError::Degenerate(_) | FlowError::EstimationInput(_) => 3,
                FlowError::Convergence { .. } => 4,
                FlowError::Io(_) | FlowError::Format(_) | FlowError::Size(_) => 5,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Flow(e) => write!(f, "{e}"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

#[derive(Parser)]
#[command(name = "specflow", version, about = "Spectral optical flow estimation and validation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cube, its ground-truth flow and a manifest.
    Generate(GenerateArgs),
    /// Fit a flow field to a cube.
    Estimate(EstimateArgs),
    /// Run an experiment recipe, or score a solution against a truth file.
    Evaluate(evaluate::EvaluateArgs),
    /// Time assembly and both solvers over a mode-count sweep.
    Bench(BenchArgs),
    /// Stack PGM images into a cube file.
    ImportPgm(ImportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FlowArg {
    Zero,
    Uniform,
    Random,
    Hexagonal,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InterpArg {
    Spectral,
    Bicubic,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BoundaryArg {
    Periodic,
    Clamp,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SolverArg {
    Direct,
    Iterative,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MissingArg {
    Skip,
    Include,
}

/// Synthetic scene options shared by `generate` and `evaluate`.
#[derive(Args, Debug, Clone, Default)]
pub struct SceneArgs {
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    /// Dominant texture wavelength in pixels.
    #[arg(long)]
    feature_scale: Option<f64>,
    #[arg(long)]
    base: Option<f64>,
    #[arg(long)]
    contrast: Option<f64>,
    /// Gaussian noise in counts.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    substeps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl SceneArgs {
    pub fn apply(&self, mut s: Scenario) -> Scenario {
        s.width = self.width.unwrap_or(s.width);
        s.height = self.height.unwrap_or(s.height);
        s.frames = self.frames.unwrap_or(s.frames);
        s.feature_scale = self.feature_scale.unwrap_or(s.feature_scale);
        s.base = self.base.unwrap_or(s.base);
        s.contrast = self.contrast.unwrap_or(s.contrast);
        s.noise = self.noise.unwrap_or(s.noise);
        s.substeps = self.substeps.or(s.substeps);
        s.seed = self.seed.unwrap_or(s.seed);
        s
    }
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Output directory.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Base name of the written files.
    #[arg(long, default_value = "synthetic")]
    name: String,
    #[arg(long, value_enum, default_value = "random")]
    flow: FlowArg,
    /// RMS speed of the truth (pixels/frame).
    #[arg(long, default_value_t = 0.2)]
    rms: f64,
    /// Mode count of a random truth, or of the stored projection of a
    /// hexagonal one.
    #[arg(long, default_value_t = 4)]
    modes: usize,
    /// Uniform flow components (pixels/frame).
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    u: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    v: f64,
    /// Hexagonal cell wavelength in pixels.
    #[arg(long, default_value_t = 80.0)]
    wavelength: f64,
    #[arg(long, value_enum, default_value = "spectral")]
    interpolation: InterpArg,
    #[arg(long, value_enum, default_value = "periodic")]
    boundary: BoundaryArg,
    #[command(flatten)]
    scene: SceneArgs,
    /// km per pixel, recorded in the cube header.
    #[arg(long)]
    pixel_scale: Option<f64>,
    /// Seconds per frame, recorded in the cube header.
    #[arg(long)]
    cadence: Option<f64>,
}

#[derive(Args, Debug)]
struct SolverOpts {
    /// Mode count for both axes.
    #[arg(long, default_value_t = 8)]
    modes: usize,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    #[arg(long, value_enum, default_value = "direct")]
    solver: SolverArg,
    /// Relative residual target of the iterative solver.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 20_000)]
    max_iter: usize,
    #[arg(long, value_enum, default_value = "skip")]
    missing: MissingArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SolverOpts {
    fn config(&self, units: Option<Units>) -> RunConfig {
        RunConfig {
            n_x: self.nx.unwrap_or(self.modes),
            n_y: self.ny.unwrap_or(self.modes),
            solver: match self.solver {
                SolverArg::Direct => SolveMethod::Direct,
                SolverArg::Iterative => SolveMethod::Iterative,
            },
            tol: self.tol,
            max_iter: self.max_iter,
            missing: match self.missing {
                MissingArg::Skip => MissingPolicy::Skip,
                MissingArg::Include => MissingPolicy::Include,
            },
            units,
            seed: self.seed,
        }
    }
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Input cube (.ofc).
    #[arg(long)]
    cube: PathBuf,
    /// Output solution (.ofv).
    #[arg(long)]
    out: PathBuf,
    /// Report path; defaults to the solution path with a .json extension.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write the evaluated field as x,y,vx,vy CSV.
    #[arg(long)]
    grid_csv: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverOpts,
    /// km per pixel; overrides the cube header.
    #[arg(long)]
    pixel_scale: Option<f64>,
    /// Seconds per frame; overrides the cube header.
    #[arg(long)]
    cadence: Option<f64>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long, default_value_t = 3)]
    frames: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![4usize, 8, 12, 16])]
    modes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Largest mode count whose dense matvec is timed.
    #[arg(long, default_value_t = 16)]
    dense_up_to: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ImportArgs {
    /// Output cube (.ofc).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    pixel_scale: Option<f64>,
    #[arg(long)]
    cadence: Option<f64>,
    /// Frames in time order.
    #[arg(required = true)]
    images: Vec<PathBuf>,
}

fn units_from(pixel_scale: Option<f64>, cadence: Option<f64>, cube: Option<&ImageCube>) -> CliResult<Option<Units>> {
    let ps = pixel_scale.or(cube.and_then(|c| c.pixel_scale()));
    let cd = cadence.or(cube.and_then(|c| c.cadence()));
    match (ps, cd) {
        (Some(p), Some(c)) => Ok(Some(Units::new(p, c)?)),
        (None, None) => Ok(None),
        _ if cube.is_none() => usage("--pixel-scale and --cadence must be given together"),
        _ => Ok(None),
    }
}

#[derive(Serialize)]
struct GenerateManifest {
    command: &'static str,
    version: &'static str,
    scenario: Scenario,
    substeps: usize,
    units: Option<Units>,
    cube: String,
    truth: String,
    /// True when the stored truth is the projection of a field outside
    /// any finite mode span.
    truth_is_projection: bool,
    truth_modes: usize,
    truth_rms: f64,
}

fn cmd_generate(a: &GenerateArgs) -> CliResult<()> {
    if !(a.rms >= 0.0) {
        return usage("--rms must be >= 0");
    }
    let flow = match a.flow {
        FlowArg::Zero => FlowKind::Zero,
        FlowArg::Uniform => FlowKind::Uniform { u: a.u, v: a.v },
        FlowArg::Random => FlowKind::Random {
            modes: a.modes,
            rms: a.rms,
        },
        FlowArg::Hexagonal => FlowKind::Hexagonal {
            rms: a.rms,
            wavelength: a.wavelength,
        },
    };
    if !matches!(a.flow, FlowArg::Uniform) && (a.u != 0.0 || a.v != 0.0) {
        return usage("--u/--v apply to --flow uniform only");
    }
    let defaults = Scenario {
        flow,
        interpolation: match a.interpolation {
            InterpArg::Spectral => Interpolation::Spectral,
            InterpArg::Bicubic => Interpolation::Bicubic,
        },
        boundary: match a.boundary {
            BoundaryArg::Periodic => Boundary::Periodic,
            BoundaryArg::Clamp => Boundary::Clamp,
        },
        ..Scenario::default()
    };
    let scenario = a.scene.apply(defaults);
    if matches!(a.flow, FlowArg::Random) && 2 * a.modes + 1 > scenario.width.min(scenario.height) {
        return usage(format!("{} modes do not fit a {}x{} grid", a.modes, scenario.height, scenario.width));
    }
    let units = units_from(a.pixel_scale, a.cadence, None)?;
    let data = generate(&scenario)?;
    let cube = data
        .cube
        .with_units(units.map(|u| u.pixel_scale), units.map(|u| u.cadence));
    let (truth, projected) = match data.truth_modes {
        Some(m) => (m, false),
        None => (SpectralVelocity::project(&data.truth.vx, &data.truth.vy, a.modes, a.modes)?, true),
    };
    std::fs::create_dir_all(&a.out_dir).map_err(FlowError::from)?;
    let cube_path = a.out_dir.join(format!("{}.ofc", a.name));
    let truth_path = a.out_dir.join(format!("{}.truth.ofv", a.name));
    save_cube(&cube, &cube_path)?;
    save_velocity(&truth, &truth_path)?;
    let manifest = GenerateManifest {
        command: "generate",
        version: env!("CARGO_PKG_VERSION"),
        scenario,
        substeps: data.substeps,
        units,
        cube: cube_path.display().to_string(),
        truth: truth_path.display().to_string(),
        truth_is_projection: projected,
        truth_modes: truth.n_x(),
        truth_rms: specflow::spectral::rms_speed(&data.truth.vx, &data.truth.vy),
    };
    let text = write_json(&a.out_dir.join(format!("{}.manifest.json", a.name)), &manifest)?;
    emit(&text);
    Ok(())
}

#[derive(Serialize)]
struct SpeedSummary {
    rms: f64,
    median: f64,
    max: f64,
    mean_vx: f64,
    mean_vy: f64,
}

impl SpeedSummary {
    fn of(field: &Field, factor: f64, border: usize) -> CliResult<Self> {
        let zero = Field::uniform(field.dim().0, field.dim().1, 0.0, 0.0);
        let m = compare_fields(field, &zero, border)?;
        let (u, v) = field.mean();
        Ok(Self {
            rms: m.rms_speed * factor,
            median: m.median_speed * factor,
            max: m.max_speed * factor,
            mean_vx: u * factor,
            mean_vy: v * factor,
        })
    }
}

#[derive(Serialize)]
struct EstimateReport {
    command: &'static str,
    version: &'static str,
    config: RunConfig,
    cube: String,
    solution: String,
    frames: usize,
    height: usize,
    width: usize,
    pairs_used: usize,
    solve: SolveReport,
    /// Interior speed statistics, pixels/frame.
    speed: SpeedSummary,
    /// Same in km/s when units are known.
    speed_kms: Option<SpeedSummary>,
    border: usize,
}

fn cmd_estimate(a: &EstimateArgs) -> CliResult<()> {
    let cube = load_cube(&a.cube)?;
    let units = units_from(a.pixel_scale, a.cadence, Some(&cube))?;
    let config = a.solver.config(units);
    config.validate(cube.height(), cube.width())?;
    let (v, solve) = specflow::estimate(&cube, config.n_x, config.n_y, &config.options())?;
    save_velocity(&v, &a.out)?;
    let field = Field::from_velocity(&v)?;
    let border = default_border(config.n_x, config.n_y, cube.height(), cube.width());
    if let Some(path) = &a.grid_csv {
        write_text(path, &grid_csv(&field.vx, &field.vy))?;
    }
    let report = EstimateReport {
        command: "estimate",
        version: env!("CARGO_PKG_VERSION"),
        config,
        cube: a.cube.display().to_string(),
        solution: a.out.display().to_string(),
        frames: cube.n_frames(),
        height: cube.height(),
        width: cube.width(),
        pairs_used: specflow::deriv::used_pairs(&cube, config.missing).len(),
        solve,
        speed: SpeedSummary::of(&field, 1.0, border)?,
        speed_kms: units.map(|u| SpeedSummary::of(&field, u.speed_factor(), border)).transpose()?,
        border,
    };
    let path = a.report.clone().unwrap_or_else(|| a.out.with_extension("json"));
    emit(&write_json(&path, &report)?);
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> CliResult<()> {
    if a.modes.is_empty() {
        return usage("--modes needs at least one value");
    }
    let scenario = Scenario {
        width: a.size,
        height: a.size,
        frames: a.frames,
        feature_scale: 16.0,
        seed: a.seed,
        ..Scenario::default()
    };
    let data = generate(&scenario)?;
    let report = experiment::bench(&data.cube, &a.modes, a.repeats, a.dense_up_to, a.tol)?;
    let doc = serde_json::json!({
        "command": "bench",
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": scenario,
        "repeats": a.repeats,
        "tol": a.tol,
        "report": report,
    });
    let text = serde_json::to_string_pretty(&doc).expect("serializable report");
    if let Some(path) = &a.out {
        write_text(path, &text)?;
    }
    emit(&text);
    Ok(())
}

fn cmd_import(a: &ImportArgs) -> CliResult<()> {
    let frames = a
        .images
        .iter()
        .map(read_pgm)
        .collect::<Result<Vec<_>, _>>()?;
    let units = units_from(a.pixel_scale, a.cadence, None)?;
    let cube = ImageCube::from_frames(&frames)?
        .with_units(units.map(|u| u.pixel_scale), units.map(|u| u.cadence))
        .flag_blank_frames();
    save_cube(&cube, &a.out)?;
    let blank: Vec<usize> = (0..cube.n_frames()).filter(|&t| !cube.is_valid(t)).collect();
    let doc = serde_json::json!({
        "command": "import-pgm",
        "out": a.out.display().to_string(),
        "frames": cube.n_frames(),
        "height": cube.height(),
        "width": cube.width(),
        "blank_frames": blank,
    });
    emit(&doc.to_string());
    Ok(())
}

pub fn ensure_exists(path: &Path) -> CliResult<()> {
    if !path.exists() {
        return Err(FlowError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} not found", path.display()),
        ))
        .into());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Bench(a) => cmd_bench(a),
        Command::ImportPgm(a) => cmd_import(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("specflow: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
