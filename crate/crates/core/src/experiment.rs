//! Controlled experiments on synthetic data: scenario generation plus the
//! recipes used by the command-line `evaluate` and `bench` commands.

use std::time::Instant;

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assemble::{assemble_dense, assemble_implicit, matvec_structured};
use crate::cube::ImageCube;
use crate::deriv::{accumulate_products_with, used_pairs, MissingPolicy};
use crate::error::{arg_err, FlowError, Result};
use crate::metrics::{
    boundary_residual_profile, compare_fields, convergence_study, default_border, gibbs_check,
    log_slope, merit_field, ConvergenceTable, Field, FlowMetrics, GibbsCheck,
};
use crate::solve::{estimate, factor_reflected, solve_direct, solve_iterative, EstimateOptions, SolveReport};
use crate::spectral::{hexagonal_field, random_field, rms_speed, SpectralVelocity};
use crate::synth::{
    advect, make_texture, traveling_waves, AdvectionConfig, Boundary, Interpolation, WaveParams,
    MAX_STEP_DISPLACEMENT,
};

/// Ground-truth flow of a synthetic scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FlowKind {
    Zero,
    Uniform { u: f64, v: f64 },
    /// Random field within the `n x n` mode span.
    Random { modes: usize, rms: f64 },
    /// Divergent hexagonal cells, not periodic on the domain.
    Hexagonal { rms: f64, wavelength: f64 },
}

impl FlowKind {
    pub fn with_rms(self, rms: f64) -> Self {
        match self {
            FlowKind::Random { modes, .. } => FlowKind::Random { modes, rms },
            FlowKind::Hexagonal { wavelength, .. } => FlowKind::Hexagonal { rms, wavelength },
            other => other,
        }
    }
}

/// Everything needed to regenerate a synthetic cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Dominant texture wavelength in pixels.
    pub feature_scale: f64,
    /// Mean intensity (counts).
    pub base: f64,
    /// Texture RMS (counts).
    pub contrast: f64,
    pub flow: FlowKind,
    pub interpolation: Interpolation,
    pub boundary: Boundary,
    /// Integration steps per frame; chosen from the peak speed when unset.
    pub substeps: Option<usize>,
    /// Gaussian noise added to every frame (counts).
    pub noise: f64,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            frames: 10,
            feature_scale: 12.0,
            base: 5000.0,
            contrast: 1000.0,
            flow: FlowKind::Random { modes: 4, rms: 0.2 },
            interpolation: Interpolation::Spectral,
            boundary: Boundary::Periodic,
            substeps: None,
            noise: 0.0,
            seed: 1,
        }
    }
}

/// Independent stream for a numbered purpose.
pub fn sub_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k.wrapping_mul(0xBF58_476D_1CE4_E5B9)) ^ k
}

pub struct Synthetic {
    pub cube: ImageCube,
    pub truth: Field,
    /// Truth in Fourier form when it lies in a finite mode span.
    pub truth_modes: Option<SpectralVelocity>,
    pub substeps: usize,
}

pub fn generate(s: &Scenario) -> Result<Synthetic> {
    let (w, h) = (s.width, s.height);
    let (truth, truth_modes) = match s.flow {
        FlowKind::Zero => {
            let v = SpectralVelocity::zeros(0, 0, w, h);
            (Field::uniform(h, w, 0.0, 0.0), Some(v))
        }
        FlowKind::Uniform { u, v } => {
            let mut m = SpectralVelocity::zeros(0, 0, w, h);
            m.set_alpha(0, 0, Complex64::new(u, 0.0));
            m.set_beta(0, 0, Complex64::new(v, 0.0));
            (Field::uniform(h, w, u, v), Some(m))
        }
        FlowKind::Random { modes, rms } => {
            let m = random_field(modes, modes, rms, sub_seed(s.seed, 1), w, h)?;
            (Field::from_velocity(&m)?, Some(m))
        }
        FlowKind::Hexagonal { rms, wavelength } => {
            let (vx, vy) = hexagonal_field(1.0, wavelength, w, h)?;
            let r = rms_speed(&vx, &vy);
            let f = if r > 0.0 { rms / r } else { 0.0 };
            (Field::new(vx * f, vy * f)?, None)
        }
    };
    let peak = truth.speed().iter().cloned().fold(0.0, f64::max);
    let substeps = s
        .substeps
        .unwrap_or_else(|| ((2.0 * peak / MAX_STEP_DISPLACEMENT).ceil() as usize).max(1));
    let texture = make_texture(w, h, s.feature_scale, sub_seed(s.seed, 0))?;
    let seed_image = texture.mapv(|t| s.base + s.contrast * t);
    let cfg = AdvectionConfig {
        n_frames: s.frames,
        substeps,
        interpolation: s.interpolation,
        boundary: s.boundary,
    };
    let mut cube = advect(&seed_image, (&truth.vx, &truth.vy), &cfg)?;
    if s.noise > 0.0 {
        cube = cube.add_gaussian_noise(s.noise, sub_seed(s.seed, 2))?;
    }
    Ok(Synthetic {
        cube,
        truth,
        truth_modes,
        substeps,
    })
}

/// Fit and compare against a truth field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitOutcome {
    pub metrics: FlowMetrics,
    pub solve: SolveReport,
}

pub fn fit_and_compare(
    cube: &ImageCube,
    truth: &Field,
    n: usize,
    options: &EstimateOptions,
    border: Option<usize>,
) -> Result<(SpectralVelocity, FitOutcome)> {
    let (v, solve) = estimate(cube, n, n, options)?;
    let fit = Field::from_velocity(&v)?;
    let border = border.unwrap_or_else(|| default_border(n, n, cube.height(), cube.width()));
    let merit = merit_field(cube, &fit, options.missing)?;
    let metrics = compare_fields(&fit, truth, border)?.with_merit(&merit);
    Ok((v, FitOutcome { metrics, solve }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoverReport {
    pub scenario: Scenario,
    pub modes: usize,
    pub outcome: FitOutcome,
    pub generate_seconds: f64,
    pub estimate_seconds: f64,
}

/// Round trip on one scenario.
pub fn recover(s: &Scenario, n: usize, options: &EstimateOptions) -> Result<RecoverReport> {
    let t0 = Instant::now();
    let data = generate(s)?;
    let generate_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let (_, outcome) = fit_and_compare(&data.cube, &data.truth, n, options, None)?;
    Ok(RecoverReport {
        scenario: *s,
        modes: n,
        outcome,
        generate_seconds,
        estimate_seconds: t1.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub relative_error: f64,
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakdownReport {
    pub scenario: Scenario,
    pub modes: usize,
    pub threshold: f64,
    pub rows: Vec<SweepRow>,
    /// Largest swept speed up to which every error stays within threshold.
    pub knee: Option<f64>,
    pub increasing_beyond_knee: bool,
}

pub const BREAKDOWN_THRESHOLD: f64 = 0.05;

/// Error versus ground-truth RMS speed.
pub fn breakdown_sweep(
    s: &Scenario,
    rms_values: &[f64],
    n: usize,
    options: &EstimateOptions,
) -> Result<BreakdownReport> {
    let mut rows = Vec::with_capacity(rms_values.len());
    for &rms in rms_values {
        let sc = Scenario {
            flow: s.flow.with_rms(rms),
            ..*s
        };
        let data = generate(&sc)?;
        let (_, out) = fit_and_compare(&data.cube, &data.truth, n, options, None)?;
        rows.push(SweepRow {
            value: rms,
            relative_error: out.metrics.relative_error,
            correlation: out.metrics.correlation,
        });
    }
    let (knee, increasing) = knee_of(&rows, BREAKDOWN_THRESHOLD);
    Ok(BreakdownReport {
        scenario: *s,
        modes: n,
        threshold: BREAKDOWN_THRESHOLD,
        rows,
        knee,
        increasing_beyond_knee: increasing,
    })
}

/// Last value of the leading run of rows within `threshold`, and whether
/// errors strictly increase from there on.
pub fn knee_of(rows: &[SweepRow], threshold: f64) -> (Option<f64>, bool) {
    let run = rows.iter().take_while(|r| r.relative_error <= threshold).count();
    if run == 0 {
        return (None, false);
    }
    let tail = &rows[run - 1..];
    let increasing = tail.windows(2).all(|p| p[1].relative_error > p[0].relative_error);
    (Some(rows[run - 1].value), increasing)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseReport {
    pub scenario: Scenario,
    pub modes: usize,
    /// Factor applied to the noiseless cube.
    pub intensity_scale: f64,
    /// RMS temporal difference per pixel and pair after scaling.
    pub chi0_rms: f64,
    pub rows: Vec<SweepRow>,
    pub monotone: bool,
}

/// Scale the noiseless cube so the zero-velocity residual RMS equals
/// `chi0_target`, then add noise of each `sigma` (one shared draw, scaled).
pub fn noise_sweep(
    s: &Scenario,
    chi0_target: f64,
    sigmas: &[f64],
    n: usize,
    options: &EstimateOptions,
) -> Result<NoiseReport> {
    let data = generate(&Scenario { noise: 0.0, ..*s })?;
    let zero = Field::uniform(s.height, s.width, 0.0, 0.0);
    let chi0 = merit_field(&data.cube, &zero, options.missing)?.chi0_rms();
    if chi0 <= 0.0 {
        return arg_err("noise sweep needs a moving scene");
    }
    let scale = chi0_target / chi0;
    let cube = data.cube.scaled(scale)?;
    let chi0_rms = merit_field(&cube, &zero, options.missing)?.chi0_rms();
    let mut rows = Vec::new();
    for &sigma in sigmas {
        let noisy = cube.add_gaussian_noise(sigma, sub_seed(s.seed, 3))?;
        let (_, out) = fit_and_compare(&noisy, &data.truth, n, options, None)?;
        rows.push(SweepRow {
            value: sigma,
            relative_error: out.metrics.relative_error,
            correlation: out.metrics.correlation,
        });
    }
    let mut order: Vec<&SweepRow> = rows.iter().collect();
    order.sort_by(|a, b| a.value.total_cmp(&b.value));
    let monotone = order.windows(2).all(|p| p[1].relative_error > p[0].relative_error);
    Ok(NoiseReport {
        scenario: *s,
        modes: n,
        intensity_scale: scale,
        chi0_rms,
        rows,
        monotone,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationRow {
    pub modes: usize,
    pub relative_error: f64,
    pub solve: SolveReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationReport {
    pub scenario: Scenario,
    pub border: usize,
    pub rows: Vec<TruncationRow>,
}

/// Error of fits with different mode counts on the same (noisy) data,
/// compared over a common interior.
pub fn truncation_sweep(
    s: &Scenario,
    modes: &[usize],
    options: &EstimateOptions,
) -> Result<TruncationReport> {
    let Some(&n_min) = modes.iter().min() else {
        return arg_err("no mode counts given");
    };
    let data = generate(s)?;
    let border = default_border(n_min, n_min, s.height, s.width);
    let mut rows = Vec::new();
    for &n in modes {
        let (_, out) = fit_and_compare(&data.cube, &data.truth, n, options, Some(border))?;
        rows.push(TruncationRow {
            modes: n,
            relative_error: out.metrics.relative_error,
            solve: out.solve,
        });
    }
    Ok(TruncationReport {
        scenario: *s,
        border,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GibbsReport {
    pub scenario: Scenario,
    pub modes: usize,
    pub metrics: FlowMetrics,
    pub check: GibbsCheck,
    pub profile: Vec<f64>,
    /// Fitted amplitudes, for export.
    #[serde(skip)]
    pub fit: Option<SpectralVelocity>,
}

/// Boundary error of a fit to a flow that is not periodic on the frame.
pub fn gibbs(s: &Scenario, n: usize, options: &EstimateOptions) -> Result<GibbsReport> {
    let data = generate(s)?;
    let (v, out) = fit_and_compare(&data.cube, &data.truth, n, options, None)?;
    let fit = Field::from_velocity(&v)?;
    let profile = boundary_residual_profile(&data.truth, &fit)?;
    let check = gibbs_check(&profile, s.width.div_ceil(2 * n.max(1)))?;
    Ok(GibbsReport {
        scenario: *s,
        modes: n,
        metrics: out.metrics,
        check,
        profile,
        fit: Some(v),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub scenario: Scenario,
    pub modes: usize,
    pub contaminant_rms: f64,
    pub waves: WaveParams,
    pub table: ConvergenceTable,
    pub slope: Option<f64>,
}

/// Convergence with window length under a traveling-wave contaminant of
/// RMS `fraction * contrast`.
pub fn convergence(
    s: &Scenario,
    fraction: f64,
    waves: &WaveParams,
    windows: &[usize],
    n: usize,
    options: &EstimateOptions,
) -> Result<ConvergenceReport> {
    let data = generate(s)?;
    let rms = fraction * s.contrast;
    let cube = if rms > 0.0 {
        let w = traveling_waves(s.width, s.height, s.frames, rms, sub_seed(s.seed, 4), waves)?;
        data.cube.plus(&w)?
    } else {
        data.cube
    };
    let table = convergence_study(&cube, n, n, windows, options)?;
    let slope = table.slope();
    Ok(ConvergenceReport {
        scenario: *s,
        modes: n,
        contaminant_rms: rms,
        waves: *waves,
        table,
        slope,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RampReport {
    pub scenario: Scenario,
    pub modes: usize,
    pub amplitude: f64,
    /// Field distance to truth without and with the ramp.
    pub error_plain: f64,
    pub error_ramp: f64,
    pub truth_rms: f64,
    /// `|error_ramp - error_plain| / truth_rms`.
    pub error_change: f64,
    /// Distance between the two fits over `truth_rms`.
    pub fit_change: f64,
}

/// Multiplicative ramp `1 + amplitude * (2x/(W-1) - 1)` along x.
pub fn ramp_profile(height: usize, width: usize, amplitude: f64) -> Array2<f64> {
    let span = (width.max(2) - 1) as f64;
    Array2::from_shape_fn((height, width), |(_, x)| 1.0 + amplitude * (2.0 * x as f64 / span - 1.0))
}

pub fn gradient_ramp(
    s: &Scenario,
    amplitude: f64,
    n: usize,
    options: &EstimateOptions,
) -> Result<RampReport> {
    if !(0.0..1.0).contains(&amplitude) {
        return arg_err(format!("ramp amplitude must lie in [0, 1), got {amplitude}"));
    }
    let data = generate(s)?;
    let ramped = data.cube.apply_gradient(&ramp_profile(s.height, s.width, amplitude))?;
    let (v0, out0) = fit_and_compare(&data.cube, &data.truth, n, options, None)?;
    let (v1, out1) = fit_and_compare(&ramped, &data.truth, n, options, None)?;
    let border = out0.metrics.border;
    let between = compare_fields(&Field::from_velocity(&v1)?, &Field::from_velocity(&v0)?, border)?;
    let truth_rms = compare_fields(&data.truth, &Field::uniform(s.height, s.width, 0.0, 0.0), border)?.rms_speed;
    Ok(RampReport {
        scenario: *s,
        modes: n,
        amplitude,
        error_plain: out0.metrics.field_distance,
        error_ramp: out1.metrics.field_distance,
        truth_rms,
        error_change: (out1.metrics.field_distance - out0.metrics.field_distance).abs() / truth_rms,
        fit_change: between.field_distance / truth_rms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MissingReport {
    pub scenario: Scenario,
    pub modes: usize,
    pub dropped: Vec<usize>,
    pub pairs_full: usize,
    pub pairs_used: usize,
    pub error_full: f64,
    pub error_missing: f64,
    /// Distance between the two fits over the RMS speed of the full fit.
    pub relative_change: f64,
}

/// Blank the listed frames (zero data), which the loader flags as missing.
pub fn blank_frames(cube: &ImageCube, indices: &[usize]) -> Result<ImageCube> {
    let mut frames: Array3<f64> = cube.frames().clone();
    for &i in indices {
        if i >= cube.n_frames() {
            return arg_err(format!("frame index {i} out of range for {} frames", cube.n_frames()));
        }
        frames.index_axis_mut(Axis(0), i).fill(0.0);
    }
    Ok(ImageCube::new(frames)?
        .with_valid(cube.valid().to_vec())?
        .with_units(cube.pixel_scale(), cube.cadence())
        .flag_blank_frames())
}

pub fn missing_frames(
    s: &Scenario,
    drop: &[usize],
    n: usize,
    options: &EstimateOptions,
) -> Result<MissingReport> {
    let data = generate(s)?;
    let gappy = blank_frames(&data.cube, drop)?;
    let opts = EstimateOptions {
        missing: MissingPolicy::Skip,
        ..*options
    };
    let (v0, out0) = fit_and_compare(&data.cube, &data.truth, n, &opts, None)?;
    let (v1, out1) = fit_and_compare(&gappy, &data.truth, n, &opts, None)?;
    let border = out0.metrics.border;
    let change = compare_fields(&Field::from_velocity(&v1)?, &Field::from_velocity(&v0)?, border)?;
    let full_rms = compare_fields(&Field::from_velocity(&v0)?, &data.truth, border)?.rms_speed;
    Ok(MissingReport {
        scenario: *s,
        modes: n,
        dropped: drop.to_vec(),
        pairs_full: used_pairs(&data.cube, MissingPolicy::Skip).len(),
        pairs_used: used_pairs(&gappy, MissingPolicy::Skip).len(),
        error_full: out0.metrics.relative_error,
        error_missing: out1.metrics.relative_error,
        relative_change: change.field_distance / full_rms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub modes: usize,
    pub tol: f64,
    /// Distance between direct and iterative fits over the direct RMS speed.
    pub relative_distance: f64,
    pub iterations: usize,
    /// Normalized directional derivative of the merit at the direct fit.
    pub gradient: f64,
}

/// Direct versus iterative solution of the same data, plus a central
/// difference probe of the merit gradient at the direct solution.
pub fn solver_equivalence(cube: &ImageCube, n: usize, tol: f64, seed: u64) -> Result<EquivalenceReport> {
    let products = accumulate_products_with(cube, MissingPolicy::Skip)?;
    let system = assemble_implicit(&products, n, n)?;
    let (vd, _) = solve_direct(&system)?;
    let (vi, rep) = solve_iterative(&system, tol, 50_000)?;
    let (fd, fi) = (Field::from_velocity(&vd)?, Field::from_velocity(&vi)?);
    let m = compare_fields(&fi, &fd, 0)?;
    let probes: Vec<SpectralVelocity> = (0..4)
        .map(|k| random_field(n, n, 1.0, sub_seed(seed, 10 + k), cube.width(), cube.height()))
        .collect::<Result<_>>()?;
    let gradient = crate::metrics::merit_gradient_check(cube, &vd, &probes, 1e-3)?;
    Ok(EquivalenceReport {
        modes: n,
        tol,
        relative_distance: m.field_distance / m.rms_speed.max(f64::MIN_POSITIVE),
        iterations: rep.iterations,
        gradient,
    })
}

/// Largest relative difference between the FFT and dense matvecs over
/// random cubes, mode counts and vectors.
pub fn matvec_agreement(instances: usize, max_modes: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n_x = rng.random_range(0..=max_modes);
        let n_y = rng.random_range(0..=max_modes);
        let h = 4 * n_y + 1 + rng.random_range(8..24);
        let w = 4 * n_x + 1 + rng.random_range(8..24);
        let frames = rng.random_range(2..5);
        let cube = ImageCube::new(Array3::from_shape_fn((frames, h, w), |_| rng.random::<f64>()))?;
        let products = accumulate_products_with(&cube, MissingPolicy::Skip)?;
        let system = assemble_dense(&products, n_x, n_y)?;
        let x: Vec<Complex64> = (0..system.dim())
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let fast = matvec_structured(&system, &x);
        let dense = system.dense_matvec(&x).expect("dense system");
        let num: f64 = fast.iter().zip(&dense).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den: f64 = dense.iter().map(|b| b.norm_sqr()).sum();
        worst = worst.max((num / den).sqrt());
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub modes: usize,
    pub unknowns: usize,
    pub assemble_seconds: f64,
    /// Cholesky factorization plus triangular solves.
    pub factor_seconds: f64,
    /// Full direct path including diagnostics.
    pub direct_seconds: f64,
    pub iterative_seconds: f64,
    pub iterations: usize,
    pub structured_matvec_seconds: f64,
    pub dense_matvec_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub rows: Vec<BenchRow>,
    /// Fitted exponent of factorization time against `n_x * n_y`.
    pub direct_exponent: Option<f64>,
}

fn best_of<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    let mut best = f64::INFINITY;
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let out = f()?;
        best = best.min(t.elapsed().as_secs_f64());
        last = Some(out);
    }
    Ok((best, last.expect("at least one run")))
}

/// Time assembly, both solvers and both matvecs across mode counts.
/// Dense matvecs are timed only up to `dense_up_to` modes.
pub fn bench(
    cube: &ImageCube,
    modes: &[usize],
    repeats: usize,
    dense_up_to: usize,
    tol: f64,
) -> Result<BenchReport> {
    let products = accumulate_products_with(cube, MissingPolicy::Skip)?;
    let mut rows = Vec::new();
    for &n in modes {
        let (assemble_seconds, system) = best_of(repeats, || assemble_implicit(&products, n, n))?;
        // the largest solve dominates the sweep, so time it once
        let reps = if n == *modes.iter().max().unwrap_or(&n) { 1 } else { repeats };
        let (factor_seconds, _) = best_of(reps, || {
            let chol = factor_reflected(&system)
                .map_err(|f| FlowError::Degenerate(format!("pivot {:.3e} at unknown {}", f.pivot, f.index)))?;
            Ok(chol.solve(&system.rhs))
        })?;
        let (direct_seconds, _) = best_of(reps, || solve_direct(&system))?;
        let (iterative_seconds, (_, rep)) = best_of(reps, || solve_iterative(&system, tol, 50_000))?;
        let x: Vec<Complex64> = (0..system.dim()).map(|k| Complex64::new((k as f64).sin(), 0.5)).collect();
        let (structured_matvec_seconds, _) = best_of(repeats.max(5), || Ok(matvec_structured(&system, &x)))?;
        let dense_matvec_seconds = if n <= dense_up_to {
            let dense = assemble_dense(&products, n, n)?;
            Some(best_of(repeats.max(5), || Ok(dense.dense_matvec(&x)))?.0)
        } else {
            None
        };
        rows.push(BenchRow {
            modes: n,
            unknowns: system.dim(),
            assemble_seconds,
            factor_seconds,
            direct_seconds,
            iterative_seconds,
            iterations: rep.iterations,
            structured_matvec_seconds,
            dense_matvec_seconds,
        });
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.modes > 0 && r.factor_seconds > 0.0)
        .map(|r| (((r.modes * r.modes) as f64).ln(), r.factor_seconds.ln()))
        .collect();
    Ok(BenchReport {
        width: cube.width(),
        height: cube.height(),
        frames: cube.n_frames(),
        rows,
        direct_exponent: log_slope(&pts),
    })
}

/// Named experiment presets shared by the command line and the test suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    Recover,
    BreakdownSweep,
    NoiseSweep,
    TruncationSweep,
    Gibbs,
    Convergence,
    GradientRamp,
    MissingFrames,
}

impl Recipe {
    pub const ALL: [Recipe; 8] = [
        Recipe::Recover,
        Recipe::BreakdownSweep,
        Recipe::NoiseSweep,
        Recipe::TruncationSweep,
        Recipe::Gibbs,
        Recipe::Convergence,
        Recipe::GradientRamp,
        Recipe::MissingFrames,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Recipe::Recover => "recover",
            Recipe::BreakdownSweep => "breakdown-sweep",
            Recipe::NoiseSweep => "noise-sweep",
            Recipe::TruncationSweep => "truncation-sweep",
            Recipe::Gibbs => "gibbs",
            Recipe::Convergence => "convergence",
            Recipe::GradientRamp => "gradient-ramp",
            Recipe::MissingFrames => "missing-frames",
        }
    }

    pub fn parse(name: &str) -> Option<Recipe> {
        Recipe::ALL.into_iter().find(|r| r.name() == name)
    }

    /// Default scenario of the preset.
    pub fn scenario(self) -> Scenario {
        let base = Scenario::default();
        let large = Scenario {
            width: 256,
            height: 256,
            feature_scale: 16.0,
            ..base
        };
        match self {
            Recipe::Recover | Recipe::NoiseSweep => large,
            Recipe::TruncationSweep => Scenario { noise: 100.0, ..large },
            Recipe::BreakdownSweep => Scenario {
                feature_scale: 6.0,
                ..base
            },
            Recipe::Gibbs => Scenario {
                width: 256,
                height: 256,
                flow: FlowKind::Hexagonal {
                    rms: 0.2,
                    wavelength: 80.0,
                },
                boundary: Boundary::Clamp,
                ..base
            },
            Recipe::Convergence => Scenario {
                frames: 80,
                flow: FlowKind::Random { modes: 2, rms: 0.1 },
                ..base
            },
            Recipe::GradientRamp => base,
            Recipe::MissingFrames => Scenario {
                frames: 40,
                noise: 50.0,
                ..base
            },
        }
    }

    /// Mode count fitted by the preset.
    pub fn modes(self) -> usize {
        match self {
            Recipe::Gibbs => 8,
            Recipe::Convergence => 2,
            _ => 4,
        }
    }

    pub fn needs_truth_files(self) -> bool {
        matches!(self, Recipe::Recover)
    }
}

/// Sweep values of the presets.
pub const BREAKDOWN_RMS: [f64; 7] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8];
pub const NOISE_SIGMAS: [f64; 4] = [0.0, 100.0, 200.0, 400.0];
pub const NOISE_CHI0: f64 = 700.0;
pub const TRUNCATION_MODES: [usize; 2] = [8, 16];
pub const CONVERGENCE_WINDOWS: [usize; 5] = [2, 5, 10, 20, 40];
pub const CONTAMINANT_FRACTION: f64 = 0.1;
pub const RAMP_AMPLITUDE: f64 = 0.5;
pub const DROPPED_FRAMES: [usize; 3] = [7, 19, 31];

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Scenario {
        Scenario {
            width: 48,
            height: 48,
            frames: 4,
            feature_scale: 10.0,
            flow: FlowKind::Random { modes: 2, rms: 0.2 },
            ..Scenario::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.cube.frames(), b.cube.frames());
        let c = generate(&Scenario { seed: 2, ..small() }).unwrap();
        assert_ne!(a.cube.frames(), c.cube.frames());
        assert!((rms_speed(&a.truth.vx, &a.truth.vy) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn zero_and_uniform_flows() {
        let z = generate(&Scenario { flow: FlowKind::Zero, ..small() }).unwrap();
        let drift = (&z.cube.frame(0) - &z.cube.frame(3)).iter().map(|d| d.abs()).fold(0.0, f64::max);
        assert!(drift < 1e-8);
        let u = generate(&Scenario {
            flow: FlowKind::Uniform { u: 0.5, v: 0.0 },
            ..small()
        })
        .unwrap();
        assert_eq!(u.truth_modes.unwrap().alpha(0, 0).re, 0.5);
    }

    #[test]
    fn hexagonal_truth_is_scaled() {
        let d = generate(&Scenario {
            flow: FlowKind::Hexagonal { rms: 0.3, wavelength: 30.0 },
            boundary: Boundary::Clamp,
            ..small()
        })
        .unwrap();
        assert!(d.truth_modes.is_none());
        assert!((rms_speed(&d.truth.vx, &d.truth.vy) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn small_recovery() {
        let r = recover(&small(), 2, &EstimateOptions::default()).unwrap();
        assert!(r.outcome.metrics.relative_error < 0.02, "{:?}", r.outcome.metrics);
    }

    #[test]
    fn knee_detection() {
        let row = |value, e| SweepRow {
            value,
            relative_error: e,
            correlation: 1.0,
        };
        let rows = [row(0.1, 0.01), row(0.2, 0.02), row(0.3, 0.06), row(0.4, 0.1)];
        assert_eq!(knee_of(&rows, 0.05), (Some(0.2), true));
        let rows = [row(0.1, 0.01), row(0.2, 0.09), row(0.3, 0.06)];
        assert_eq!(knee_of(&rows, 0.05), (Some(0.1), false));
        assert_eq!(knee_of(&[row(0.1, 0.2)], 0.05), (None, false));
    }

    #[test]
    fn blanked_frames_are_flagged() {
        let d = generate(&small()).unwrap();
        let g = blank_frames(&d.cube, &[1]).unwrap();
        assert_eq!(g.valid(), &[true, false, true, true]);
        assert_eq!(used_pairs(&g, MissingPolicy::Skip), vec![2]);
        assert!(blank_frames(&d.cube, &[9]).is_err());
    }

    #[test]
    fn matvecs_agree() {
        assert!(matvec_agreement(5, 3, 1).unwrap() < 1e-10);
    }

    #[test]
    fn recipe_names_round_trip() {
        for r in Recipe::ALL {
            assert_eq!(Recipe::parse(r.name()), Some(r));
            let s = r.scenario();
            assert!(4 * r.modes() < s.width.min(s.height));
        }
        assert_eq!(Recipe::parse("nope"), None);
    }

    #[test]
    fn ramp_profile_range() {
        let p = ramp_profile(3, 11, 0.5);
        assert_eq!(p[[0, 0]], 0.5);
        assert_eq!(p[[2, 10]], 1.5);
        assert!((p[[1, 5]] - 1.0).abs() < 1e-15);
    }
}
