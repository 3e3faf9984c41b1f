//! Truncated Fourier representation of a 2-D velocity field.
//!
//! A field with mode counts `(n_x, n_y)` on an `X x Y` pixel domain is
//!
//! ```text
//! v_x(x, y) = sum_{i=-n_x..n_x} sum_{j=-n_y..n_y} alpha(i, j) exp(-2 pi I (i x / X + j y / Y))
//! ```
//!
//! and likewise `v_y` with `beta`. Pixel coordinates are integer indices
//! from zero, so evaluating on the grid is a plain forward DFT of the
//! embedded amplitude table. Real fields have `alpha(-i, -j) = conj(alpha(i, j))`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{arg_err, FlowError, Result};
use crate::fft::{fft2_real, wrap, Fft2};

pub const VELOCITY_MAGIC: &[u8; 4] = b"OFV1";

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Complex amplitudes of both velocity components, in pixels/frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralVelocity {
    n_x: usize,
    n_y: usize,
    width: usize,
    height: usize,
    /// `[j + n_y, i + n_x]`
    alpha: Array2<Complex64>,
    beta: Array2<Complex64>,
}

impl SpectralVelocity {
    pub fn zeros(n_x: usize, n_y: usize, width: usize, height: usize) -> Self {
        let shape = (2 * n_y + 1, 2 * n_x + 1);
        Self {
            n_x,
            n_y,
            width,
            height,
            alpha: Array2::from_elem(shape, ZERO),
            beta: Array2::from_elem(shape, ZERO),
        }
    }

    pub fn from_parts(
        width: usize,
        height: usize,
        alpha: Array2<Complex64>,
        beta: Array2<Complex64>,
    ) -> Result<Self> {
        let (r, c) = alpha.dim();
        if r % 2 == 0 || c % 2 == 0 || beta.dim() != (r, c) {
            return arg_err("amplitude tables must share an odd (2n_y+1, 2n_x+1) shape");
        }
        Ok(Self {
            n_x: c / 2,
            n_y: r / 2,
            width,
            height,
            alpha,
            beta,
        })
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn alpha_table(&self) -> &Array2<Complex64> {
        &self.alpha
    }

    pub fn beta_table(&self) -> &Array2<Complex64> {
        &self.beta
    }

    #[inline]
    fn slot(&self, i: i64, j: i64) -> [usize; 2] {
        assert!(
            i.unsigned_abs() as usize <= self.n_x && j.unsigned_abs() as usize <= self.n_y,
            "mode ({i}, {j}) outside retained range"
        );
        [(j + self.n_y as i64) as usize, (i + self.n_x as i64) as usize]
    }

    pub fn alpha(&self, i: i64, j: i64) -> Complex64 {
        self.alpha[self.slot(i, j)]
    }

    pub fn beta(&self, i: i64, j: i64) -> Complex64 {
        self.beta[self.slot(i, j)]
    }

    pub fn set_alpha(&mut self, i: i64, j: i64, v: Complex64) {
        let s = self.slot(i, j);
        self.alpha[s] = v;
    }

    pub fn set_beta(&mut self, i: i64, j: i64, v: Complex64) {
        let s = self.slot(i, j);
        self.beta[s] = v;
    }

    /// Number of retained modes per component.
    pub fn mode_count(&self) -> usize {
        (2 * self.n_x + 1) * (2 * self.n_y + 1)
    }

    /// Flatten to `[alpha..., beta...]`, modes in `j`-major, `i`-minor order.
    pub fn to_unknowns(&self) -> Vec<Complex64> {
        self.alpha.iter().chain(self.beta.iter()).copied().collect()
    }

    pub fn from_unknowns(
        n_x: usize,
        n_y: usize,
        width: usize,
        height: usize,
        values: &[Complex64],
    ) -> Result<Self> {
        let shape = (2 * n_y + 1, 2 * n_x + 1);
        let m = shape.0 * shape.1;
        if values.len() != 2 * m {
            return arg_err(format!("expected {} unknowns, got {}", 2 * m, values.len()));
        }
        Ok(Self {
            n_x,
            n_y,
            width,
            height,
            alpha: Array2::from_shape_vec(shape, values[..m].to_vec()).unwrap(),
            beta: Array2::from_shape_vec(shape, values[m..].to_vec()).unwrap(),
        })
    }

    fn check_grid(&self, height: usize, width: usize) -> Result<()> {
        if height != self.height || width != self.width {
            return arg_err(format!(
                "grid {height}x{width} does not match field domain {}x{}",
                self.height, self.width
            ));
        }
        Ok(())
    }

    fn evaluate_complex(&self, table: &Array2<Complex64>) -> Array2<Complex64> {
        let (h, w) = (self.height, self.width);
        let mut grid = Array2::from_elem((h, w), ZERO);
        for ((r, c), a) in table.indexed_iter() {
            let i = c as i64 - self.n_x as i64;
            let j = r as i64 - self.n_y as i64;
            grid[[wrap(j, h), wrap(i, w)]] += *a;
        }
        Fft2::forward(h, w).process(&mut grid);
        grid
    }

    /// Velocity components `(v_x, v_y)` on the `height x width` pixel grid.
    pub fn evaluate(&self, height: usize, width: usize) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_grid(height, width)?;
        Ok((
            self.evaluate_complex(&self.alpha).mapv(|z| z.re),
            self.evaluate_complex(&self.beta).mapv(|z| z.re),
        ))
    }

    /// Largest imaginary part of the evaluated field relative to its RMS.
    pub fn imaginary_residue(&self) -> f64 {
        let ex = self.evaluate_complex(&self.alpha);
        let ey = self.evaluate_complex(&self.beta);
        let n = (self.width * self.height) as f64;
        let ms = ex.iter().chain(ey.iter()).map(|z| z.re * z.re).sum::<f64>() / n;
        let worst = ex.iter().chain(ey.iter()).map(|z| z.im.abs()).fold(0.0, f64::max);
        if ms == 0.0 {
            worst
        } else {
            worst / ms.sqrt()
        }
    }

    /// Largest violation of `a(-i,-j) = conj(a(i,j))` over both components.
    pub fn symmetry_deviation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for table in [&self.alpha, &self.beta] {
            let (r, c) = table.dim();
            for ((y, x), a) in table.indexed_iter() {
                let partner = table[[r - 1 - y, c - 1 - x]];
                worst = worst.max((*a - partner.conj()).norm());
            }
        }
        worst
    }

    /// Average each amplitude with its flipped conjugate.
    pub fn symmetrized(&self) -> Self {
        let sym = |table: &Array2<Complex64>| {
            let (r, c) = table.dim();
            Array2::from_shape_fn((r, c), |(y, x)| {
                (table[[y, x]] + table[[r - 1 - y, c - 1 - x]].conj()) * 0.5
            })
        };
        Self {
            alpha: sym(&self.alpha),
            beta: sym(&self.beta),
            ..self.clone()
        }
    }

    /// Uniform part of the flow, `(Re alpha(0,0), Re beta(0,0))`.
    pub fn mean_flow(&self) -> (f64, f64) {
        (self.alpha(0, 0).re, self.beta(0, 0).re)
    }

    pub fn subtract_mean_flow(&self) -> Self {
        let mut out = self.clone();
        out.set_alpha(0, 0, ZERO);
        out.set_beta(0, 0, ZERO);
        out
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            alpha: self.alpha.mapv(|a| a * factor),
            beta: self.beta.mapv(|a| a * factor),
            ..self.clone()
        }
    }

    /// `a * self + b * other`; both fields must share modes and domain.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if (self.n_x, self.n_y, self.width, self.height)
            != (other.n_x, other.n_y, other.width, other.height)
        {
            return arg_err("fields differ in mode counts or domain");
        }
        Ok(Self {
            alpha: &self.alpha * a + &other.alpha * b,
            beta: &self.beta * a + &other.beta * b,
            ..self.clone()
        })
    }

    /// Least-squares projection of a grid field onto the retained modes.
    pub fn project(vx: &Array2<f64>, vy: &Array2<f64>, n_x: usize, n_y: usize) -> Result<Self> {
        if vx.dim() != vy.dim() {
            return arg_err("component shapes differ");
        }
        let (h, w) = vx.dim();
        if 2 * n_x + 1 > w || 2 * n_y + 1 > h {
            return arg_err(format!("{n_x}x{n_y} modes do not fit a {h}x{w} grid"));
        }
        let norm = 1.0 / (h * w) as f64;
        let (fx, fy) = (fft2_real(vx), fft2_real(vy));
        let mut out = Self::zeros(n_x, n_y, w, h);
        for j in -(n_y as i64)..=n_y as i64 {
            for i in -(n_x as i64)..=n_x as i64 {
                let bin = [wrap(-j, h), wrap(-i, w)];
                out.set_alpha(i, j, fx[bin] * norm);
                out.set_beta(i, j, fy[bin] * norm);
            }
        }
        Ok(out.symmetrized())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 32 * self.mode_count());
        out.extend_from_slice(VELOCITY_MAGIC);
        for v in [self.n_x, self.n_y, self.width, self.height] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for z in self.alpha.iter().chain(self.beta.iter()) {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..4] != VELOCITY_MAGIC {
            return Err(FlowError::Format("not an OFV1 velocity file".into()));
        }
        let u = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        let (n_x, n_y, width, height) = (u(4), u(8), u(12), u(16));
        let modes = (2 * n_x + 1)
            .checked_mul(2 * n_y + 1)
            .ok_or_else(|| FlowError::Size("mode counts overflow".into()))?;
        let expected = modes
            .checked_mul(32)
            .and_then(|v| v.checked_add(20))
            .ok_or_else(|| FlowError::Size("mode counts overflow".into()))?;
        if bytes.len() != expected {
            return Err(FlowError::Format(format!(
                "expected {expected} bytes, found {}",
                bytes.len()
            )));
        }
        let values: Vec<Complex64> = bytes[20..]
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect();
        Self::from_unknowns(n_x, n_y, width, height, &values)
    }
}

pub fn save_velocity(v: &SpectralVelocity, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, v.to_bytes())?;
    Ok(())
}

pub fn load_velocity(path: impl AsRef<Path>) -> Result<SpectralVelocity> {
    SpectralVelocity::from_bytes(&fs::read(path)?)
}

/// CSV with columns `x,y,vx,vy`, one row per pixel.
pub fn grid_csv(vx: &Array2<f64>, vy: &Array2<f64>) -> String {
    let mut out = String::from("x,y,vx,vy\n");
    for ((y, x), a) in vx.indexed_iter() {
        out.push_str(&format!("{x},{y},{a:e},{:e}\n", vy[[y, x]]));
    }
    out
}

/// Root mean square of the speed `|v|` over a grid.
pub fn rms_speed(vx: &Array2<f64>, vy: &Array2<f64>) -> f64 {
    let n = vx.len() as f64;
    (vx.iter().zip(vy.iter()).map(|(a, b)| a * a + b * b).sum::<f64>() / n).sqrt()
}

/// Random real field with a flat spectrum over the retained modes, rescaled
/// so its grid RMS speed equals `target_rms`.
pub fn random_field(
    n_x: usize,
    n_y: usize,
    target_rms: f64,
    seed: u64,
    width: usize,
    height: usize,
) -> Result<SpectralVelocity> {
    if !(target_rms >= 0.0) {
        return arg_err(format!("target rms must be >= 0, got {target_rms}"));
    }
    let mut v = SpectralVelocity::zeros(n_x, n_y, width, height);
    if target_rms == 0.0 {
        return Ok(v);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    for j in 0..=n_y as i64 {
        for i in -(n_x as i64)..=n_x as i64 {
            if j == 0 && i < 0 {
                continue;
            }
            let (a, b) = if i == 0 && j == 0 {
                (Complex64::new(normal(), 0.0), Complex64::new(normal(), 0.0))
            } else {
                (
                    Complex64::new(normal(), normal()),
                    Complex64::new(normal(), normal()),
                )
            };
            v.set_alpha(i, j, a);
            v.set_beta(i, j, b);
            v.set_alpha(-i, -j, a.conj());
            v.set_beta(-i, -j, b.conj());
        }
    }
    let (vx, vy) = v.evaluate(height, width)?;
    let rms = rms_speed(&vx, &vy);
    if rms == 0.0 {
        return arg_err("random field evaluated to zero on the grid");
    }
    Ok(v.scaled(target_rms / rms))
}

fn hex_wavevectors(wavelength: f64) -> [(f64, f64); 3] {
    let k = 2.0 * PI / wavelength;
    [0.0f64, 2.0 * PI / 3.0, 4.0 * PI / 3.0].map(|t| (k * t.cos(), k * t.sin()))
}

/// Cell potential `sum_m cos(k_m . r)` with one cell centre at the origin.
pub fn hexagonal_potential(wavelength: f64, x: f64, y: f64) -> f64 {
    hex_wavevectors(wavelength)
        .iter()
        .map(|(kx, ky)| (kx * x + ky * y).cos())
        .sum()
}

/// `amplitude * grad(potential)` at an arbitrary point.
pub fn hexagonal_velocity_at(amplitude: f64, wavelength: f64, x: f64, y: f64) -> (f64, f64) {
    let mut v = (0.0, 0.0);
    for (kx, ky) in hex_wavevectors(wavelength) {
        let s = (kx * x + ky * y).sin();
        v.0 -= amplitude * kx * s;
        v.1 -= amplitude * ky * s;
    }
    v
}

/// Divergent hexagonal cellular flow sampled on the pixel grid. Not periodic
/// on the domain in general.
pub fn hexagonal_field(
    amplitude: f64,
    wavelength: f64,
    width: usize,
    height: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if !(wavelength > 0.0) {
        return arg_err(format!("wavelength must be positive, got {wavelength}"));
    }
    let mut vx = Array2::zeros((height, width));
    let mut vy = Array2::zeros((height, width));
    for y in 0..height {
        for x in 0..width {
            let (a, b) = hexagonal_velocity_at(amplitude, wavelength, x as f64, y as f64);
            vx[[y, x]] = a;
            vy[[y, x]] = b;
        }
    }
    Ok((vx, vy))
}
