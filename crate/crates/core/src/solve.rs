//! Solving the normal system for the spectral amplitudes.
//!
//! The coefficient matrix `M(k, i) = P(k + i)` is complex symmetric. With
//! the reflected unknowns `g(i) = alpha(-i)` the system reads
//! `sum_i P(k - i) g(i) = R(k)`, and since the product fields are real,
//! `P(-m) = conj(P(m))`, so `H(k, i) = P(k - i)` is Hermitian. It is also a
//! Gram matrix (`g^H H g = sum_t sum_xy |I_x a(x,y) + I_y b(x,y)|^2`), hence
//! positive semi-definite: Cholesky for the direct path, conjugate gradients
//! for the iterative one.

use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::assemble::{assemble_implicit, flip_modes, matvec_structured, NormalSystem};
use crate::cube::ImageCube;
use crate::deriv::{accumulate_products_with, MissingPolicy};
use crate::error::{FlowError, Result};
use crate::linalg::{norm, pcg, Cholesky, PivotFailure};
use crate::spectral::SpectralVelocity;

/// Condition number above which the data are declared degenerate.
pub const CONDITION_LIMIT: f64 = 1e12;
/// Relative pivot floor of the Cholesky factorization.
const PIVOT_FLOOR: f64 = 1e-13;
const CONDITION_ITERATIONS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    #[default]
    Direct,
    Iterative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: SolveMethod,
    pub iterations: usize,
    /// `|M a - R| / |R|` for the returned amplitudes.
    pub residual: f64,
    pub wall_time: f64,
    /// Conjugate-symmetry violation removed by post-symmetrization,
    /// relative to the largest amplitude.
    pub symmetry_deviation: f64,
    pub condition_estimate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    pub method: SolveMethod,
    /// Relative residual target of the iterative solver.
    pub tol: f64,
    pub max_iter: usize,
    pub missing: MissingPolicy,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            method: SolveMethod::Direct,
            tol: 1e-10,
            max_iter: 20_000,
            missing: MissingPolicy::Skip,
        }
    }
}

impl EstimateOptions {
    pub fn iterative(tol: f64) -> Self {
        Self {
            method: SolveMethod::Iterative,
            tol,
            ..Self::default()
        }
    }
}

fn describe_unknown(system: &NormalSystem, reflected_index: usize) -> String {
    let (n_x, n_y) = (system.n_x(), system.n_y());
    let m = system.spectra.modes();
    let (component, q) = if reflected_index < m {
        ("v_x", reflected_index)
    } else {
        ("v_y", reflected_index - m)
    };
    let w = 2 * n_x + 1;
    // reflected storage holds mode (-i, -j) at the slot of (i, j)
    let i = n_x as i64 - (q % w) as i64;
    let j = n_y as i64 - (q / w) as i64;
    format!("{component} mode ({i}, {j})")
}

fn finish(
    system: &NormalSystem,
    reflected: &[Complex64],
) -> Result<(SpectralVelocity, f64, f64)> {
    let raw = SpectralVelocity::from_unknowns(
        system.n_x(),
        system.n_y(),
        system.width(),
        system.height(),
        &flip_modes(reflected),
    )?;
    let peak = raw
        .to_unknowns()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let deviation = if peak > 0.0 {
        raw.symmetry_deviation() / peak
    } else {
        0.0
    };
    let v = raw.symmetrized();
    let residual = relative_residual(system, &v);
    Ok((v, deviation, residual))
}

/// `|M a - R| / |R|`, or `|M a|` when the right-hand side vanishes.
pub fn relative_residual(system: &NormalSystem, v: &SpectralVelocity) -> f64 {
    let mv = matvec_structured(system, &v.to_unknowns());
    let diff: Vec<Complex64> = mv.iter().zip(&system.rhs).map(|(a, b)| a - b).collect();
    let rn = norm(&system.rhs);
    if rn > 0.0 {
        norm(&diff) / rn
    } else {
        norm(&diff)
    }
}

/// Cholesky factor of the reflected Hermitian form `H(k, i) = P(k - i)`,
/// built straight from the spectra tables.
pub fn factor_reflected(system: &NormalSystem) -> std::result::Result<Cholesky, PivotFailure> {
    let s = &system.spectra;
    let m = s.modes();
    let w = 2 * s.n_x + 1;
    let (nx, ny) = (s.n_x as i64, s.n_y as i64);
    let label = |q: usize| ((q % w) as i64 - nx, (q / w) as i64 - ny);
    let entry = |r: usize, c: usize| {
        let (br, qr) = (r / m, r % m);
        let (bc, qc) = (c / m, c % m);
        let (k, l) = label(qr);
        let (i, j) = label(qc);
        let table = match (br, bc) {
            (0, 0) => &s.pxx,
            (1, 1) => &s.pyy,
            _ => &s.pxy,
        };
        s.at(table, k - i, l - j)
    };
    Cholesky::factor(system.dim(), entry, PIVOT_FLOOR)
}

/// Cholesky factorization of the reflected Hermitian form.
pub fn solve_direct(system: &NormalSystem) -> Result<(SpectralVelocity, SolveReport)> {
    let start = Instant::now();
    let s = &system.spectra;
    let chol = factor_reflected(system).map_err(|fail| {
        if s.pxx.iter().chain(s.pyy.iter()).all(|z| z.norm() == 0.0) {
            FlowError::Degenerate(
                "zero intensity gradient everywhere: textureless frames carry no flow information"
                    .into(),
            )
        } else {
            FlowError::Degenerate(format!(
                "normal matrix is singular at {} (pivot {:.3e}); the images do not constrain it",
                describe_unknown(system, fail.index),
                fail.pivot
            ))
        }
    })?;
    let (cond, weakest) = chol.condition_estimate(CONDITION_ITERATIONS);
    if !(cond <= CONDITION_LIMIT) {
        return Err(FlowError::Degenerate(format!(
            "normal matrix condition estimate {cond:.3e} exceeds {CONDITION_LIMIT:.0e}; weakest direction is {}",
            describe_unknown(system, weakest)
        )));
    }
    let reflected = chol.solve(&system.rhs);
    let (v, deviation, residual) = finish(system, &reflected)?;
    Ok((
        v,
        SolveReport {
            method: SolveMethod::Direct,
            iterations: 0,
            residual,
            wall_time: start.elapsed().as_secs_f64(),
            symmetry_deviation: deviation,
            condition_estimate: Some(cond),
        },
    ))
}

/// Jacobi-preconditioned conjugate gradients on the FFT-applied operator.
pub fn solve_iterative(
    system: &NormalSystem,
    tol: f64,
    max_iter: usize,
) -> Result<(SpectralVelocity, SolveReport)> {
    let start = Instant::now();
    let s = &system.spectra;
    let m = s.modes();
    let (dxx, dyy) = (s.at(&s.pxx, 0, 0).re, s.at(&s.pyy, 0, 0).re);
    if !(dxx > 0.0) || !(dyy > 0.0) {
        return Err(FlowError::Degenerate(if dxx <= 0.0 && dyy <= 0.0 {
            "zero intensity gradient everywhere: textureless frames carry no flow information".into()
        } else {
            format!(
                "no intensity gradient along {}; that velocity component is unconstrained",
                if dxx > 0.0 { "y" } else { "x" }
            )
        }));
    }
    let diag: Vec<f64> = (0..2 * m).map(|q| if q < m { dxx } else { dyy }).collect();
    let op = system.operator();
    let result = pcg(
        |g| op.apply(&flip_modes(g)),
        &diag,
        &system.rhs,
        tol,
        max_iter,
    );
    let (v, deviation, residual) = finish(system, &result.x)?;
    if !result.converged {
        return Err(FlowError::Convergence {
            iterations: result.iterations,
            residual: result.residual,
            best: Box::new(v),
        });
    }
    Ok((
        v,
        SolveReport {
            method: SolveMethod::Iterative,
            iterations: result.iterations,
            residual,
            wall_time: start.elapsed().as_secs_f64(),
            symmetry_deviation: deviation,
            condition_estimate: None,
        },
    ))
}

/// Fit a velocity field with `(n_x, n_y)` modes to a cube.
pub fn estimate(
    cube: &ImageCube,
    n_x: usize,
    n_y: usize,
    options: &EstimateOptions,
) -> Result<(SpectralVelocity, SolveReport)> {
    let products = accumulate_products_with(cube, options.missing)?;
    let system = assemble_implicit(&products, n_x, n_y)?;
    solve_system(&system, options)
}

pub fn solve_system(
    system: &NormalSystem,
    options: &EstimateOptions,
) -> Result<(SpectralVelocity, SolveReport)> {
    match options.method {
        SolveMethod::Direct => solve_direct(system),
        SolveMethod::Iterative => solve_iterative(system, options.tol, options.max_iter),
    }
}
