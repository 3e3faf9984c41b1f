//! Ground-truth cubes: a seed image advected by a known steady flow.
//!
//! Frame `t` is the seed sampled at the departure points of characteristics
//! traced backward for `t` frames from every pixel (RK4 per substep). The
//! departure points are carried from one frame to the next, which is exact
//! for a steady flow.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cube::ImageCube;
use crate::error::{arg_err, Result};
use crate::fft::{fft2_real, Fft2};

/// Largest displacement allowed per integration step, in pixels.
pub const MAX_STEP_DISPLACEMENT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    /// Keys cubic convolution.
    Bicubic,
    /// Trigonometric interpolation of the periodic grid data.
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    /// Trajectories stop at the domain edge; samples use edge values.
    Clamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvectionConfig {
    pub n_frames: usize,
    pub substeps: usize,
    pub interpolation: Interpolation,
    pub boundary: Boundary,
}

impl Default for AdvectionConfig {
    fn default() -> Self {
        Self {
            n_frames: 10,
            substeps: 2,
            interpolation: Interpolation::Spectral,
            boundary: Boundary::Periodic,
        }
    }
}

/// Evaluates a grid field at off-grid points.
pub trait Sampler: Sync {
    fn sample(&self, x: f64, y: f64) -> f64;
}

/// Exact trigonometric interpolant of a periodic grid field, keeping only
/// the Fourier coefficients above a relative threshold. Cost per point is
/// proportional to the number of retained coefficients, so band-limited
/// fields are cheap.
pub struct FourierSampler {
    width: usize,
    height: usize,
    kx_min: i64,
    kx_len: usize,
    rows: Vec<(i64, Vec<(usize, Complex64)>)>,
}

fn signed_freq(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

impl FourierSampler {
    pub fn new(field: &Array2<f64>) -> Self {
        Self::with_threshold(field, 1e-13)
    }

    pub fn with_threshold(field: &Array2<f64>, rel_threshold: f64) -> Self {
        let (h, w) = field.dim();
        let spec = fft2_real(field);
        let norm = 1.0 / (h * w) as f64;
        let peak = spec.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let cut = peak * rel_threshold;
        let mut terms: Vec<(i64, i64, Complex64)> = Vec::new();
        for ((ky, kx), c) in spec.indexed_iter() {
            if c.norm() <= cut || peak == 0.0 {
                continue;
            }
            // keep one member of each conjugate pair, doubled
            let partner = ((h - ky) % h, (w - kx) % w);
            let weight = match (ky, kx).cmp(&partner) {
                std::cmp::Ordering::Less => 2.0,
                std::cmp::Ordering::Equal => 1.0,
                std::cmp::Ordering::Greater => continue,
            };
            terms.push((signed_freq(ky, h), signed_freq(kx, w), c * norm * weight));
        }
        let kx_min = terms.iter().map(|t| t.1).min().unwrap_or(0);
        let kx_max = terms.iter().map(|t| t.1).max().unwrap_or(0);
        terms.sort_by_key(|t| (t.0, t.1));
        let mut rows: Vec<(i64, Vec<(usize, Complex64)>)> = Vec::new();
        for (ky, kx, c) in terms {
            let slot = (kx - kx_min) as usize;
            match rows.last_mut() {
                Some((k, list)) if *k == ky => list.push((slot, c)),
                _ => rows.push((ky, vec![(slot, c)])),
            }
        }
        Self {
            width: w,
            height: h,
            kx_min,
            kx_len: (kx_max - kx_min + 1) as usize,
            rows,
        }
    }

    pub fn terms(&self) -> usize {
        self.rows.iter().map(|r| r.1.len()).sum()
    }
}

impl Sampler for FourierSampler {
    fn sample(&self, x: f64, y: f64) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        let tx = 2.0 * PI * x / self.width as f64;
        let step = Complex64::from_polar(1.0, tx);
        let mut phases = Vec::with_capacity(self.kx_len);
        let mut p = Complex64::from_polar(1.0, tx * self.kx_min as f64);
        for _ in 0..self.kx_len {
            phases.push(p);
            p *= step;
        }
        let ty = 2.0 * PI * y / self.height as f64;
        let mut total = 0.0;
        for (ky, terms) in &self.rows {
            let mut acc = Complex64::new(0.0, 0.0);
            for (slot, c) in terms {
                acc += c * phases[*slot];
            }
            total += (acc * Complex64::from_polar(1.0, ty * *ky as f64)).re;
        }
        total
    }
}

/// Keys cubic convolution (a = -1/2).
pub struct BicubicSampler {
    data: Array2<f64>,
    boundary: Boundary,
}

impl BicubicSampler {
    pub fn new(field: &Array2<f64>, boundary: Boundary) -> Self {
        Self {
            data: field.as_standard_layout().to_owned(),
            boundary,
        }
    }
}

#[inline]
fn keys_weights(t: f64) -> [f64; 4] {
    let a = -0.5;
    let w = |d: f64| {
        let d = d.abs();
        if d <= 1.0 {
            (a + 2.0) * d * d * d - (a + 3.0) * d * d + 1.0
        } else if d < 2.0 {
            a * d * d * d - 5.0 * a * d * d + 8.0 * a * d - 4.0 * a
        } else {
            0.0
        }
    };
    [w(1.0 + t), w(t), w(1.0 - t), w(2.0 - t)]
}

impl Sampler for BicubicSampler {
    fn sample(&self, x: f64, y: f64) -> f64 {
        let (h, w) = self.data.dim();
        let (x, y) = match self.boundary {
            Boundary::Periodic => (x, y),
            Boundary::Clamp => (x.clamp(0.0, (w - 1) as f64), y.clamp(0.0, (h - 1) as f64)),
        };
        let (x0, y0) = (x.floor(), y.floor());
        let (wx, wy) = (keys_weights(x - x0), keys_weights(y - y0));
        let index = |i: i64, n: usize| -> usize {
            match self.boundary {
                Boundary::Periodic => i.rem_euclid(n as i64) as usize,
                Boundary::Clamp => i.clamp(0, n as i64 - 1) as usize,
            }
        };
        let mut total = 0.0;
        for (dy, wyv) in wy.iter().enumerate() {
            let row = index(y0 as i64 - 1 + dy as i64, h);
            let mut acc = 0.0;
            for (dx, wxv) in wx.iter().enumerate() {
                acc += wxv * self.data[[row, index(x0 as i64 - 1 + dx as i64, w)]];
            }
            total += wyv * acc;
        }
        total
    }
}

fn make_sampler(
    field: &Array2<f64>,
    interpolation: Interpolation,
    boundary: Boundary,
) -> Box<dyn Sampler> {
    match interpolation {
        Interpolation::Spectral => Box::new(FourierSampler::new(field)),
        Interpolation::Bicubic => Box::new(BicubicSampler::new(field, boundary)),
    }
}

/// Advect `seed` under the steady flow `(vx, vy)` (pixels/frame).
pub fn advect(
    seed: &Array2<f64>,
    velocity: (&Array2<f64>, &Array2<f64>),
    config: &AdvectionConfig,
) -> Result<ImageCube> {
    let (vx, vy) = velocity;
    let (h, w) = seed.dim();
    if vx.dim() != (h, w) || vy.dim() != (h, w) {
        return arg_err("velocity grid must match seed shape");
    }
    if config.n_frames < 2 {
        return arg_err("advection needs at least 2 frames");
    }
    if config.substeps < 1 {
        return arg_err("substeps must be >= 1");
    }
    let vmax = vx
        .iter()
        .zip(vy.iter())
        .map(|(a, b)| a.hypot(*b))
        .fold(0.0, f64::max);
    if vmax / config.substeps as f64 > MAX_STEP_DISPLACEMENT {
        let need = (vmax / MAX_STEP_DISPLACEMENT).ceil() as usize;
        return arg_err(format!(
            "peak speed {vmax:.3} px/frame exceeds {MAX_STEP_DISPLACEMENT} px per step; use substeps >= {need}"
        ));
    }
    // Velocity follows the seed's interpolation on periodic domains; a
    // clamped domain is not periodic so it always uses the local kernel.
    let vel_interp = match config.boundary {
        Boundary::Periodic => config.interpolation,
        Boundary::Clamp => Interpolation::Bicubic,
    };
    let svx = make_sampler(vx, vel_interp, config.boundary);
    let svy = make_sampler(vy, vel_interp, config.boundary);
    let sseed = make_sampler(seed, config.interpolation, config.boundary);
    let clamp = |p: (f64, f64)| match config.boundary {
        Boundary::Periodic => p,
        Boundary::Clamp => (p.0.clamp(0.0, (w - 1) as f64), p.1.clamp(0.0, (h - 1) as f64)),
    };
    // backward characteristics: dx/ds = -v(x)
    let rate = |p: (f64, f64)| -> (f64, f64) {
        let p = clamp(p);
        (-svx.sample(p.0, p.1), -svy.sample(p.0, p.1))
    };
    let dt = 1.0 / config.substeps as f64;
    let mut pos: Vec<(f64, f64)> = (0..h * w).map(|i| ((i % w) as f64, (i / w) as f64)).collect();
    let mut frames = Array3::zeros((config.n_frames, h, w));
    frames.index_axis_mut(Axis(0), 0).assign(seed);
    for t in 1..config.n_frames {
        for p in pos.iter_mut() {
            for _ in 0..config.substeps {
                let k1 = rate(*p);
                let k2 = rate((p.0 + 0.5 * dt * k1.0, p.1 + 0.5 * dt * k1.1));
                let k3 = rate((p.0 + 0.5 * dt * k2.0, p.1 + 0.5 * dt * k2.1));
                let k4 = rate((p.0 + dt * k3.0, p.1 + dt * k3.1));
                *p = clamp((
                    p.0 + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
                    p.1 + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
                ));
            }
        }
        let mut frame = frames.index_axis_mut(Axis(0), t);
        for (i, p) in pos.iter().enumerate() {
            frame[[i / w, i % w]] = sseed.sample(p.0, p.1);
        }
    }
    ImageCube::new(frames)
}

/// Relative half-width of the texture's spectral annulus.
const TEXTURE_BAND: f64 = 0.3;

/// Band-limited random texture with power concentrated around wavelength
/// `feature_scale` pixels, normalized to zero mean and unit RMS.
pub fn make_texture(width: usize, height: usize, feature_scale: f64, seed: u64) -> Result<Array2<f64>> {
    if !(feature_scale >= 2.0) {
        return arg_err(format!("feature scale must be >= 2 px, got {feature_scale}"));
    }
    let k0 = 1.0 / feature_scale;
    let sigma = 0.5 * TEXTURE_BAND * k0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = Array2::from_elem((height, width), Complex64::new(0.0, 0.0));
    let mut count = 0usize;
    for ky in 0..height {
        for kx in 0..width {
            let fx = signed_freq(kx, width) as f64 / width as f64;
            let fy = signed_freq(ky, height) as f64 / height as f64;
            let d = fx.hypot(fy) - k0;
            // draw for every bin so the stream does not depend on the band
            let z = Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
            if d.abs() <= TEXTURE_BAND * k0 {
                spec[[ky, kx]] = z * (-(d * d) / (2.0 * sigma * sigma)).exp();
                count += 1;
            }
        }
    }
    if count == 0 {
        return arg_err(format!(
            "no Fourier modes near wavelength {feature_scale} on a {height}x{width} grid"
        ));
    }
    Fft2::inverse(height, width).process(&mut spec);
    let mut field = spec.mapv(|z| z.re);
    let mean = field.mean().unwrap_or(0.0);
    field.mapv_inplace(|v| v - mean);
    let rms = (field.iter().map(|v| v * v).sum::<f64>() / field.len() as f64).sqrt();
    if rms == 0.0 {
        return arg_err("texture collapsed to a constant");
    }
    field.mapv_inplace(|v| v / rms);
    Ok(field)
}

/// Parameters of a traveling-wave intensity contaminant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveParams {
    pub count: usize,
    pub min_wavelength: f64,
    pub max_wavelength: f64,
    /// Temporal periods, in frames.
    pub min_period: f64,
    pub max_period: f64,
}

impl Default for WaveParams {
    fn default() -> Self {
        Self {
            count: 12,
            min_wavelength: 12.0,
            max_wavelength: 24.0,
            min_period: 4.0,
            max_period: 8.0,
        }
    }
}

/// Superposition of plane waves `cos(k.r - w t + phase)` with random
/// directions, wavelengths, periods and phases, scaled to RMS `rms` over the
/// whole `T x H x W` block. `count` pairs are drawn, each pair sharing a
/// wavelength and period but running in opposite directions.
pub fn traveling_waves(
    width: usize,
    height: usize,
    n_frames: usize,
    rms: f64,
    seed: u64,
    params: &WaveParams,
) -> Result<Array3<f64>> {
    if params.count == 0 || !(params.min_wavelength > 0.0) || !(params.min_period > 0.0) {
        return arg_err("wave contaminant needs at least one wave with positive scales");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // each draw contributes a counter-propagating pair with independent
    // phases, so the field has no net drift direction
    let mut waves: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(2 * params.count);
    for _ in 0..params.count {
        let dir = rng.random::<f64>() * 2.0 * PI;
        let lambda = params.min_wavelength
            + rng.random::<f64>() * (params.max_wavelength - params.min_wavelength);
        let period = params.min_period + rng.random::<f64>() * (params.max_period - params.min_period);
        let k = 2.0 * PI / lambda;
        let omega = 2.0 * PI / period;
        let (kx, ky) = (k * dir.cos(), k * dir.sin());
        waves.push((kx, ky, omega, rng.random::<f64>() * 2.0 * PI));
        waves.push((-kx, -ky, omega, rng.random::<f64>() * 2.0 * PI));
    }
    let mut out = Array3::zeros((n_frames, height, width));
    for ((t, y, x), v) in out.indexed_iter_mut() {
        *v = waves
            .iter()
            .map(|(kx, ky, om, ph)| (kx * x as f64 + ky * y as f64 - om * t as f64 + ph).cos())
            .sum();
    }
    let cur = (out.iter().map(|v| v * v).sum::<f64>() / out.len() as f64).sqrt();
    if cur > 0.0 {
        out.mapv_inplace(|v| v * rms / cur);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::random_field;

    fn rel_rms(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let num: f64 = a.iter().zip(b.iter()).map(|(p, q)| (p - q).powi(2)).sum();
        let den: f64 = b.iter().map(|q| q * q).sum();
        (num / den).sqrt()
    }

    #[test]
    fn fourier_sampler_reproduces_grid_and_shifts() {
        let t = make_texture(32, 24, 6.0, 3).unwrap();
        let s = FourierSampler::new(&t);
        for ((y, x), v) in t.indexed_iter() {
            assert!((s.sample(x as f64, y as f64) - v).abs() < 1e-11);
        }
        let c = Array2::from_shape_fn((8, 16), |(_, x)| (2.0 * PI * x as f64 / 16.0).cos());
        let s = FourierSampler::new(&c);
        assert_eq!(s.terms(), 1);
        assert!((s.sample(0.3, 2.7) - (2.0 * PI * 0.3 / 16.0).cos()).abs() < 1e-14);
    }

    #[test]
    fn bicubic_is_exact_on_grid_and_linear_ramps() {
        let f = Array2::from_shape_fn((10, 10), |(y, x)| 2.0 * x as f64 - y as f64);
        let s = BicubicSampler::new(&f, Boundary::Clamp);
        assert!((s.sample(4.0, 5.0) - 3.0).abs() < 1e-12);
        assert!((s.sample(4.25, 5.5) - 3.0).abs() < 1e-12);
        assert_eq!(s.sample(-3.0, 0.0), f[[0, 0]]);
    }

    #[test]
    fn zero_velocity_repeats_seed() {
        let seed = make_texture(16, 16, 4.0, 1).unwrap();
        let z = Array2::zeros((16, 16));
        for interpolation in [Interpolation::Spectral, Interpolation::Bicubic] {
            let cfg = AdvectionConfig {
                n_frames: 4,
                interpolation,
                ..AdvectionConfig::default()
            };
            let cube = advect(&seed, (&z, &z), &cfg).unwrap();
            for t in 0..4 {
                for (a, b) in cube.frame(t).iter().zip(seed.iter()) {
                    assert!((a - b).abs() < 1e-11);
                }
            }
        }
    }

    #[test]
    fn uniform_translation_of_a_harmonic() {
        let w = 32;
        let seed = Array2::from_shape_fn((16, w), |(_, x)| (2.0 * PI * x as f64 / w as f64).cos());
        let vx = Array2::ones((16, w));
        let vy = Array2::zeros((16, w));
        let cfg = AdvectionConfig {
            n_frames: 6,
            substeps: 1,
            ..AdvectionConfig::default()
        };
        let cube = advect(&seed, (&vx, &vy), &cfg).unwrap();
        for t in 0..6 {
            for ((_, x), v) in cube.frame(t).indexed_iter() {
                let expect = (2.0 * PI * (x as f64 - t as f64) / w as f64).cos();
                assert!((v - expect).abs() < 1e-8);
            }
        }
    }

    fn forward_backward(interpolation: Interpolation, feature: f64) -> f64 {
        let (h, w) = (64, 64);
        let seed = make_texture(w, h, feature, 5).unwrap();
        let v = random_field(2, 2, 0.2, 7, w, h).unwrap();
        let (vx, vy) = v.evaluate(h, w).unwrap();
        let cfg = AdvectionConfig {
            n_frames: 11,
            substeps: 16,
            interpolation,
            boundary: Boundary::Periodic,
        };
        let fwd = advect(&seed, (&vx, &vy), &cfg).unwrap();
        let last = fwd.frame(10).to_owned();
        let back = advect(&last, (&-&vx, &-&vy), &cfg).unwrap();
        rel_rms(&back.frame(10).to_owned(), &seed)
    }

    #[test]
    fn forward_backward_inversion() {
        let spectral = forward_backward(Interpolation::Spectral, 16.0);
        assert!(spectral < 1e-8, "spectral {spectral}");
        let bicubic = forward_backward(Interpolation::Bicubic, 24.0);
        assert!(bicubic < 1e-3, "bicubic {bicubic}");
    }

    #[test]
    fn advection_composes() {
        let (h, w) = (48, 48);
        let seed = make_texture(w, h, 12.0, 9).unwrap();
        let (vx, vy) = random_field(2, 2, 0.3, 4, w, h).unwrap().evaluate(h, w).unwrap();
        let cfg = |n| AdvectionConfig {
            n_frames: n,
            substeps: 4,
            ..AdvectionConfig::default()
        };
        let long = advect(&seed, (&vx, &vy), &cfg(9)).unwrap();
        let half = advect(&seed, (&vx, &vy), &cfg(5)).unwrap();
        let rest = advect(&half.frame(4).to_owned(), (&vx, &vy), &cfg(5)).unwrap();
        let err = rel_rms(&rest.frame(4).to_owned(), &long.frame(8).to_owned());
        assert!(err < 1e-6, "composition error {err}");
    }

    #[test]
    fn advection_keeps_value_range() {
        // grid maximum equals the continuous maximum for this seed
        let (h, w) = (32, 32);
        let seed = Array2::from_shape_fn((h, w), |(y, x)| {
            (2.0 * PI * x as f64 / w as f64).cos() * (2.0 * PI * 2.0 * y as f64 / h as f64).cos()
        });
        let (vx, vy) = random_field(2, 2, 0.4, 2, w, h).unwrap().evaluate(h, w).unwrap();
        let cube = advect(&seed, (&vx, &vy), &AdvectionConfig::default()).unwrap();
        let rms = (seed.iter().map(|v| v * v).sum::<f64>() / seed.len() as f64).sqrt();
        let max = cube.frames().iter().cloned().fold(f64::MIN, f64::max);
        assert!(max <= 1.0 + 1e-6 * rms);
    }

    #[test]
    fn large_displacement_is_rejected() {
        let seed = make_texture(16, 16, 4.0, 1).unwrap();
        let vx = Array2::from_elem((16, 16), 3.0);
        let vy = Array2::zeros((16, 16));
        let cfg = AdvectionConfig {
            substeps: 1,
            ..AdvectionConfig::default()
        };
        let err = advect(&seed, (&vx, &vy), &cfg).unwrap_err();
        assert!(err.to_string().contains("substeps >= 2"), "{err}");
        let cfg = AdvectionConfig {
            substeps: 2,
            n_frames: 2,
            ..AdvectionConfig::default()
        };
        assert!(advect(&seed, (&vx, &vy), &cfg).is_ok());
    }

    #[test]
    fn texture_is_normalized_and_deterministic() {
        let a = make_texture(40, 36, 8.0, 11).unwrap();
        assert_eq!(a, make_texture(40, 36, 8.0, 11).unwrap());
        assert_ne!(a, make_texture(40, 36, 8.0, 12).unwrap());
        let mean = a.mean().unwrap();
        let rms = (a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt();
        assert!(mean.abs() < 1e-12);
        assert!((rms - 1.0).abs() < 1e-9);
        assert!(make_texture(16, 16, 1.5, 0).is_err());
    }

    #[test]
    fn texture_periodogram_peaks_at_feature_scale() {
        for (n, scale) in [(128usize, 8.0), (96, 16.0), (64, 6.0)] {
            let t = make_texture(n, n, scale, 21).unwrap();
            let spec = fft2_real(&t);
            // radially averaged power in unit-width rings of integer radius
            let mut power = vec![0.0; n];
            let mut count = vec![0usize; n];
            for ((ky, kx), c) in spec.indexed_iter() {
                let r = (signed_freq(kx, n) as f64).hypot(signed_freq(ky, n) as f64).round() as usize;
                if r < n {
                    power[r] += c.norm_sqr();
                    count[r] += 1;
                }
            }
            let peak = (1..n)
                .filter(|r| count[*r] > 0)
                .max_by(|a, b| (power[*a] / count[*a] as f64).total_cmp(&(power[*b] / count[*b] as f64)))
                .unwrap();
            let peak_freq = peak as f64 / n as f64;
            let target = 1.0 / scale;
            assert!((peak_freq - target).abs() <= 0.3 * target, "n={n} peak {peak_freq} target {target}");
        }
    }

    #[test]
    fn wave_contaminant_rms() {
        let w = traveling_waves(20, 16, 5, 0.1, 3, &WaveParams::default()).unwrap();
        let rms = (w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64).sqrt();
        assert!((rms - 0.1).abs() < 1e-12);
    }
}
