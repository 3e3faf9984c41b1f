//! `evaluate`: experiment recipes on synthetic data, or scoring of an
//! existing solution.

use std::path::PathBuf;

use clap::builder::PossibleValuesParser;
use clap::Args;
use serde::Serialize;

use specflow::config::{RunConfig, Units};
use specflow::experiment::{self as exp, fit_and_compare, generate, Recipe, RecoverReport, Scenario, SweepRow};
use specflow::metrics::{
    boundary_residual_profile, compare_fields, default_border, merit_field, profile_csv, speed_histogram,
    zonal_profile, Field, FlowMetrics, SpeedHistogram,
};
use specflow::spectral::{load_velocity, save_velocity};
use specflow::synth::WaveParams;
use specflow::{load_cube, EstimateOptions, FlowError, MissingPolicy, SolveMethod};

use crate::output::{emit, write_json, write_text};
use crate::{ensure_exists, usage, CliResult, SceneArgs, SolverArg};

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Experiment preset to run.
    #[arg(long, value_parser = PossibleValuesParser::new(Recipe::ALL.map(Recipe::name)))]
    recipe: Option<String>,
    /// Fitted solution (.ofv) to score instead of running a synthetic
    /// experiment.
    #[arg(long)]
    solution: Option<PathBuf>,
    /// Ground-truth velocity (.ofv).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Cube the solution was fitted to; adds the merit and unit scaling.
    #[arg(long)]
    cube: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Overrides the preset's mode count.
    #[arg(long)]
    modes: Option<usize>,
    /// Overrides the preset's solver.
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    #[arg(long)]
    tol: Option<f64>,
    /// Overrides the preset's flow RMS (pixels/frame).
    #[arg(long)]
    rms: Option<f64>,
    /// Interior margin for scoring a solution; defaults to the mode-count rule.
    #[arg(long)]
    border: Option<usize>,
    /// Histogram bin width, in km/s when units are known and pixels/frame otherwise.
    #[arg(long, default_value_t = 0.05)]
    bin_width: f64,
    #[command(flatten)]
    scene: SceneArgs,
}

pub fn run(a: &EvaluateArgs) -> CliResult<()> {
    let recipe = a.recipe.as_deref().map(|r| Recipe::parse(r).expect("validated by clap"));
    match (&a.solution, recipe) {
        (Some(_), Some(r)) if r != Recipe::Recover => {
            usage(format!("recipe {} runs on synthetic data and takes no --solution", r.name()))
        }
        (Some(sol), r) => {
            if r.is_some_and(Recipe::needs_truth_files) && a.truth.is_none() {
                return usage("recipe recover needs --truth when scoring a --solution");
            }
            score_solution(a, sol)
        }
        (None, Some(r)) => run_recipe(a, r),
        (None, None) => usage("give --recipe, or --solution to score a fit"),
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'static str,
    version: &'static str,
    recipe: &'a str,
    config: RunConfig,
    scenario: Scenario,
    report: T,
}

fn to_value<T: Serialize>(r: T) -> serde_json::Value {
    serde_json::to_value(r).expect("reports serialize")
}

fn rows_csv(header: &str, rows: &[SweepRow]) -> String {
    let mut out = format!("{header},relative_error,correlation\n");
    for r in rows {
        out.push_str(&format!("{},{:e},{:e}\n", r.value, r.relative_error, r.correlation));
    }
    out
}

fn run_recipe(a: &EvaluateArgs, recipe: Recipe) -> CliResult<()> {
    let mut scenario = a.scene.apply(recipe.scenario());
    if let Some(rms) = a.rms {
        scenario.flow = scenario.flow.with_rms(rms);
    }
    let n = a.modes.unwrap_or(recipe.modes());
    // the larger truncation fits are solved iteratively by default
    let default_solver = match recipe {
        Recipe::TruncationSweep => SolveMethod::Iterative,
        _ => SolveMethod::Direct,
    };
    let method = match a.solver {
        Some(SolverArg::Direct) => SolveMethod::Direct,
        Some(SolverArg::Iterative) => SolveMethod::Iterative,
        None => default_solver,
    };
    let tol = a.tol.unwrap_or(if method == SolveMethod::Iterative { 1e-8 } else { 1e-10 });
    let config = RunConfig {
        n_x: n,
        n_y: n,
        solver: method,
        tol,
        missing: MissingPolicy::Skip,
        seed: scenario.seed,
        ..RunConfig::default()
    };
    config.validate(scenario.height, scenario.width)?;
    let opts = config.options();
    let dir = &a.out_dir;
    std::fs::create_dir_all(dir).map_err(FlowError::from)?;
    let name = recipe.name();
    let envelope = |report: serde_json::Value| Envelope {
        command: "evaluate",
        version: env!("CARGO_PKG_VERSION"),
        recipe: name,
        config,
        scenario,
        report,
    };
    let json_path = dir.join(format!("{name}.json"));
    let text = match recipe {
        Recipe::Recover => {
            let t0 = std::time::Instant::now();
            let data = generate(&scenario)?;
            let generate_seconds = t0.elapsed().as_secs_f64();
            let t1 = std::time::Instant::now();
            let (v, outcome) = fit_and_compare(&data.cube, &data.truth, n, &opts, None)?;
            let estimate_seconds = t1.elapsed().as_secs_f64();
            let fit = Field::from_velocity(&v)?;
            save_velocity(&v, dir.join("recover.solution.ofv"))?;
            if let Some(t) = &data.truth_modes {
                save_velocity(t, dir.join("recover.truth.ofv"))?;
            }
            write_text(&dir.join("recover.histogram.csv"), &speed_histogram(&fit, a.bin_width, None)?.to_csv())?;
            let report = RecoverReport {
                scenario,
                modes: n,
                outcome,
                generate_seconds,
                estimate_seconds,
            };
            write_json(&json_path, &envelope(to_value(report)))?
        }
        Recipe::BreakdownSweep => {
            let r = exp::breakdown_sweep(&scenario, &exp::BREAKDOWN_RMS, n, &opts)?;
            write_text(&dir.join("breakdown-sweep.csv"), &rows_csv("rms", &r.rows))?;
            write_json(&json_path, &envelope(to_value(r)))?
        }
        Recipe::NoiseSweep => {
            let r = exp::noise_sweep(&scenario, exp::NOISE_CHI0, &exp::NOISE_SIGMAS, n, &opts)?;
            write_text(&dir.join("noise-sweep.csv"), &rows_csv("sigma", &r.rows))?;
            write_json(&json_path, &envelope(to_value(r)))?
        }
        Recipe::TruncationSweep => {
            let modes: Vec<usize> = match a.modes {
                Some(m) => vec![m, 2 * m],
                None => exp::TRUNCATION_MODES.to_vec(),
            };
            let r = exp::truncation_sweep(&scenario, &modes, &opts)?;
            let mut csv = String::from("modes,relative_error,iterations\n");
            for row in &r.rows {
                csv.push_str(&format!("{},{:e},{}\n", row.modes, row.relative_error, row.solve.iterations));
            }
            write_text(&dir.join("truncation-sweep.csv"), &csv)?;
            write_json(&json_path, &envelope(to_value(r)))?
        }
        Recipe::Gibbs => {
            let r = exp::gibbs(&scenario, n, &opts)?;
            write_text(&dir.join("gibbs.profile.csv"), &profile_csv(&r.profile))?;
            if let Some(v) = &r.fit {
                save_velocity(v, dir.join("gibbs.solution.ofv"))?;
            }
            write_json(&json_path, &envelope(to_value(r)))?
        }
        Recipe::Convergence => {
            let r = exp::convergence(
                &scenario,
                exp::CONTAMINANT_FRACTION,
                &WaveParams::default(),
                &exp::CONVERGENCE_WINDOWS,
                n,
                &opts,
            )?;
            write_text(&dir.join("convergence.csv"), &r.table.to_csv())?;
            write_json(&json_path, &envelope(to_value(r)))?
        }
        Recipe::GradientRamp => {
            let r = exp::gradient_ramp(&scenario, exp::RAMP_AMPLITUDE, n, &opts)?;
            write_json(&json_path, &envelope(to_value(r)))?
        }
        Recipe::MissingFrames => {
            let r = exp::missing_frames(&scenario, &exp::DROPPED_FRAMES, n, &opts)?;
            write_json(&json_path, &envelope(to_value(r)))?
        }
    };
    emit(&text);
    Ok(())
}

#[derive(Serialize)]
struct ScoreReport {
    command: &'static str,
    version: &'static str,
    solution: String,
    truth: Option<String>,
    cube: Option<String>,
    n_x: usize,
    n_y: usize,
    units: Option<Units>,
    /// Against the truth when given, otherwise against zero flow.
    metrics: FlowMetrics,
    histogram: SpeedHistogram,
}

fn score_solution(a: &EvaluateArgs, solution: &PathBuf) -> CliResult<()> {
    ensure_exists(solution)?;
    let v = load_velocity(solution)?;
    let fit = Field::from_velocity(&v)?;
    let (h, w) = fit.dim();
    let border = a
        .border
        .unwrap_or_else(|| default_border(v.n_x(), v.n_y(), h, w));
    let truth = match &a.truth {
        Some(p) => {
            ensure_exists(p)?;
            let t = load_velocity(p)?;
            if (t.height(), t.width()) != (h, w) {
                return usage(format!(
                    "truth grid {}x{} differs from solution grid {h}x{w}",
                    t.height(),
                    t.width()
                ));
            }
            Some(Field::from_velocity(&t)?)
        }
        None => None,
    };
    let reference = truth.clone().unwrap_or_else(|| Field::uniform(h, w, 0.0, 0.0));
    let mut metrics = compare_fields(&fit, &reference, border)?;
    let mut units = None;
    if let Some(c) = &a.cube {
        let cube = load_cube(c)?;
        if (cube.height(), cube.width()) != (h, w) {
            return usage(format!("cube frames {}x{} differ from solution grid {h}x{w}", cube.height(), cube.width()));
        }
        metrics = metrics.with_merit(&merit_field(&cube, &fit, EstimateOptions::default().missing)?);
        if let (Some(p), Some(t)) = (cube.pixel_scale(), cube.cadence()) {
            units = Some(Units::new(p, t)?);
        }
    }
    let histogram = speed_histogram(&fit, a.bin_width, units.map(|u| u.speed_factor()))?;
    let dir = &a.out_dir;
    write_text(&dir.join("histogram.csv"), &histogram.to_csv())?;
    write_text(&dir.join("zonal.csv"), &profile_csv(&zonal_profile(&fit)))?;
    if let Some(t) = &truth {
        write_text(&dir.join("residual.csv"), &profile_csv(&boundary_residual_profile(t, &fit)?))?;
    }
    let report = ScoreReport {
        command: "evaluate",
        version: env!("CARGO_PKG_VERSION"),
        solution: solution.display().to_string(),
        truth: a.truth.as_ref().map(|p| p.display().to_string()),
        cube: a.cube.as_ref().map(|p| p.display().to_string()),
        n_x: v.n_x(),
        n_y: v.n_y(),
        units,
        metrics,
        histogram,
    };
    emit(&write_json(&dir.join("evaluation.json"), &report)?);
    Ok(())
}
