//! Merit function, field comparison and the derived studies.

use ndarray::{s, Array2};
use serde::Serialize;

use crate::assemble::{product_spectra, NormalSystem, ProductSpectra};
use crate::cube::ImageCube;
use crate::deriv::{pair_derivatives, used_pairs, DerivativeProducts, MissingPolicy, BORDER};
use crate::error::{arg_err, Result};
use crate::solve::{solve_system, EstimateOptions};
use crate::spectral::SpectralVelocity;

/// A velocity field sampled on the pixel grid (pixels/frame).
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub vx: Array2<f64>,
    pub vy: Array2<f64>,
}

impl Field {
    pub fn new(vx: Array2<f64>, vy: Array2<f64>) -> Result<Self> {
        if vx.dim() != vy.dim() {
            return arg_err(format!("component shapes differ: {:?} vs {:?}", vx.dim(), vy.dim()));
        }
        Ok(Self { vx, vy })
    }

    /// Evaluate a spectral field on its own grid.
    pub fn from_velocity(v: &SpectralVelocity) -> Result<Self> {
        let (vx, vy) = v.evaluate(v.height(), v.width())?;
        Ok(Self { vx, vy })
    }

    pub fn uniform(height: usize, width: usize, u: f64, v: f64) -> Self {
        Self {
            vx: Array2::from_elem((height, width), u),
            vy: Array2::from_elem((height, width), v),
        }
    }

    /// `(height, width)`.
    pub fn dim(&self) -> (usize, usize) {
        self.vx.dim()
    }

    pub fn speed(&self) -> Array2<f64> {
        ndarray::Zip::from(&self.vx)
            .and(&self.vy)
            .map_collect(|a, b| a.hypot(*b))
    }

    pub fn mean(&self) -> (f64, f64) {
        (self.vx.mean().unwrap_or(0.0), self.vy.mean().unwrap_or(0.0))
    }

    pub fn minus_mean(&self) -> Self {
        let (u, v) = self.mean();
        Self {
            vx: self.vx.mapv(|a| a - u),
            vy: self.vy.mapv(|a| a - v),
        }
    }

    pub fn difference(&self, other: &Field) -> Result<Field> {
        check_dims(self, other)?;
        Ok(Self {
            vx: &self.vx - &other.vx,
            vy: &self.vy - &other.vy,
        })
    }
}

fn check_dims(a: &Field, b: &Field) -> Result<()> {
    if a.dim() != b.dim() {
        return arg_err(format!("field shapes differ: {:?} vs {:?}", a.dim(), b.dim()));
    }
    Ok(())
}

/// Half a wavelength of the highest retained mode, the default margin
/// excluded from comparisons. Capped at a quarter of the smaller side so
/// very low mode counts still leave an interior.
pub fn default_border(n_x: usize, n_y: usize, height: usize, width: usize) -> usize {
    let half = |n: usize, len: usize| if n == 0 { BORDER } else { len.div_ceil(2 * n) };
    half(n_x, width)
        .max(half(n_y, height))
        .min(height.min(width) / 4)
}

/// Merit of a velocity field on a cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Merit {
    /// Sum of squared advection residuals.
    pub chi2: f64,
    /// Same sum at zero velocity.
    pub chi0: f64,
    /// Number of pixel-pair samples in the sums.
    pub samples: usize,
}

impl Merit {
    /// Residual RMS per pixel and pair.
    pub fn chi_rms(&self) -> f64 {
        (self.chi2 / self.samples.max(1) as f64).sqrt()
    }

    /// RMS temporal difference per pixel and pair.
    pub fn chi0_rms(&self) -> f64 {
        (self.chi0 / self.samples.max(1) as f64).sqrt()
    }
}

pub fn merit(cube: &ImageCube, v: &SpectralVelocity) -> Result<Merit> {
    merit_with(cube, v, MissingPolicy::Skip)
}

/// Sum over used pairs and interior pixels of `(I_t + v . grad I)^2`.
pub fn merit_with(cube: &ImageCube, v: &SpectralVelocity, policy: MissingPolicy) -> Result<Merit> {
    let (h, w) = (cube.height(), cube.width());
    if (v.height(), v.width()) != (h, w) {
        return arg_err(format!(
            "velocity grid {}x{} does not match cube frames {h}x{w}",
            v.height(),
            v.width()
        ));
    }
    let field = Field::from_velocity(v)?;
    merit_field(cube, &field, policy)
}

/// Merit of a grid-sampled field.
pub fn merit_field(cube: &ImageCube, field: &Field, policy: MissingPolicy) -> Result<Merit> {
    let (h, w) = (cube.height(), cube.width());
    if field.dim() != (h, w) {
        return arg_err(format!("field shape {:?} does not match cube frames {h}x{w}", field.dim()));
    }
    if h <= 2 * BORDER || w <= 2 * BORDER {
        return arg_err(format!("frames {h}x{w} have no interior"));
    }
    let (mut chi2, mut chi0, mut samples) = (0.0, 0.0, 0);
    let inner = s![BORDER..h - BORDER, BORDER..w - BORDER];
    let (vx, vy) = (field.vx.slice(inner), field.vy.slice(inner));
    for t in used_pairs(cube, policy) {
        let d = pair_derivatives(cube.frame(t), cube.frame(t + 1))?;
        ndarray::Zip::from(d.it.slice(inner))
            .and(d.gx.slice(inner))
            .and(d.gy.slice(inner))
            .and(vx)
            .and(vy)
            .for_each(|it, gx, gy, u, v| {
                let r = it + u * gx + v * gy;
                chi2 += r * r;
                chi0 += it * it;
            });
        samples += (h - 2 * BORDER) * (w - 2 * BORDER);
    }
    Ok(Merit { chi2, chi0, samples })
}

/// Optimality check by central differences: for each probe direction,
/// the derivative of the merit along it, normalized to a cosine between the
/// residual and the probe's induced change (0 at an exact minimum).
pub fn merit_gradient_check(
    cube: &ImageCube,
    v: &SpectralVelocity,
    probes: &[SpectralVelocity],
    step: f64,
) -> Result<f64> {
    let base = merit(cube, v)?;
    let mut worst: f64 = 0.0;
    for p in probes {
        let plus = merit(cube, &v.combine(1.0, p, step)?)?;
        let minus = merit(cube, &v.combine(1.0, p, -step)?)?;
        let slope = (plus.chi2 - minus.chi2) / (2.0 * step);
        // curvature term sum (p . grad I)^2
        let curvature = (plus.chi2 + minus.chi2 - 2.0 * base.chi2) / (2.0 * step * step);
        if curvature <= 0.0 || base.chi0 <= 0.0 {
            continue;
        }
        worst = worst.max(slope.abs() / (2.0 * (base.chi0 * curvature).sqrt()));
    }
    Ok(worst)
}

/// Comparison of an estimated field against a reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowMetrics {
    pub chi2: Option<f64>,
    pub chi0: Option<f64>,
    pub chi_rms: Option<f64>,
    pub chi0_rms: Option<f64>,
    /// Speed statistics of the estimate.
    pub rms_speed: f64,
    pub median_speed: f64,
    pub max_speed: f64,
    /// RMS of `|v1 - v2|`.
    pub field_distance: f64,
    /// `field_distance` over the RMS speed of the reference.
    pub relative_error: f64,
    /// Cosine similarity of the stacked components.
    pub correlation: f64,
    pub border: usize,
    pub pixels: usize,
}

impl FlowMetrics {
    pub fn with_merit(mut self, m: &Merit) -> Self {
        self.chi2 = Some(m.chi2);
        self.chi0 = Some(m.chi0);
        self.chi_rms = Some(m.chi_rms());
        self.chi0_rms = Some(m.chi0_rms());
        self
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Compare `v1` (estimate) with `v2` (reference) on pixels at least
/// `border` pixels from every edge.
pub fn compare_fields(v1: &Field, v2: &Field, border: usize) -> Result<FlowMetrics> {
    check_dims(v1, v2)?;
    let (h, w) = v1.dim();
    if 2 * border >= h || 2 * border >= w {
        return arg_err(format!("border {border} leaves no pixels of a {h}x{w} grid"));
    }
    let inner = s![border..h - border, border..w - border];
    let (mut d2, mut s11, mut s22, mut s12) = (0.0, 0.0, 0.0, 0.0);
    let mut speeds = Vec::with_capacity((h - 2 * border) * (w - 2 * border));
    ndarray::Zip::from(v1.vx.slice(inner))
        .and(v1.vy.slice(inner))
        .and(v2.vx.slice(inner))
        .and(v2.vy.slice(inner))
        .for_each(|ax, ay, bx, by| {
            d2 += (ax - bx).powi(2) + (ay - by).powi(2);
            s11 += ax * ax + ay * ay;
            s22 += bx * bx + by * by;
            s12 += ax * bx + ay * by;
            speeds.push(ax.hypot(*ay));
        });
    let n = speeds.len() as f64;
    let correlation = if s11 > 0.0 && s22 > 0.0 {
        (s12 / (s11 * s22).sqrt()).clamp(-1.0, 1.0)
    } else if s11 == s22 {
        1.0
    } else {
        0.0
    };
    let field_distance = (d2 / n).sqrt();
    let ref_rms = (s22 / n).sqrt();
    let max_speed = speeds.iter().cloned().fold(0.0, f64::max);
    let pixels = speeds.len();
    Ok(FlowMetrics {
        chi2: None,
        chi0: None,
        chi_rms: None,
        chi0_rms: None,
        rms_speed: (s11 / n).sqrt(),
        median_speed: median(&mut speeds),
        max_speed,
        field_distance,
        relative_error: if ref_rms > 0.0 { field_distance / ref_rms } else { field_distance },
        correlation,
        border,
        pixels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    /// Window length in frames.
    pub n: usize,
    /// Mean distance to the reference over all window offsets.
    pub distance: f64,
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// First frame of the reference window.
    pub reference_start: usize,
    pub reference_length: usize,
    pub border: usize,
}

impl ConvergenceTable {
    /// Least-squares slope of `ln(distance)` against `ln(N)`.
    pub fn slope(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.distance > 0.0)
            .map(|r| ((r.n as f64).ln(), r.distance.ln()))
            .collect();
        log_slope(&pts)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,distance\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:e}\n", r.n, r.distance));
        }
        out
    }
}

/// Slope of the least-squares line through `(x, y)` points.
pub fn log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Distance of `N`-frame estimates to a reference fitted on the final
/// `max(N)` frames, averaged over all window offsets. Windows are drawn
/// from the frames preceding the reference when they are long enough,
/// otherwise from the whole cube. Mean flows are removed first.
pub fn convergence_study(
    cube: &ImageCube,
    n_x: usize,
    n_y: usize,
    window_lengths: &[usize],
    options: &EstimateOptions,
) -> Result<ConvergenceTable> {
    let t_len = cube.n_frames();
    let Some(&n_max) = window_lengths.iter().max() else {
        return arg_err("no window lengths given");
    };
    if window_lengths.iter().any(|&n| n < 2) {
        return arg_err("window lengths must be >= 2 frames");
    }
    if n_max > t_len {
        return arg_err(format!("window of {n_max} frames exceeds the {t_len}-frame cube"));
    }
    let (h, w) = (cube.height(), cube.width());
    // one spectra table per usable pair; windows are sums of these
    let usable = used_pairs(cube, options.missing);
    let mut pair_spectra: Vec<Option<ProductSpectra>> = vec![None; t_len - 1];
    for t in usable {
        let mut p = DerivativeProducts::zeros(h, w);
        p.add_pair(&pair_derivatives(cube.frame(t), cube.frame(t + 1))?);
        pair_spectra[t] = Some(product_spectra(&p, n_x, n_y)?);
    }
    let border = default_border(n_x, n_y, h, w);
    let fit = |start: usize, len: usize| -> Result<Field> {
        let mut acc = ProductSpectra::zeros(n_x, n_y, w, h);
        let mut pairs = 0;
        for s in pair_spectra[start..start + len - 1].iter().flatten() {
            acc.add(s);
            pairs += 1;
        }
        if pairs == 0 {
            return Err(crate::error::FlowError::EstimationInput(format!(
                "window of {len} frames at {start} has no valid pair"
            )));
        }
        let (v, _) = solve_system(&NormalSystem::from_spectra(acc, false), options)?;
        Field::from_velocity(&v.subtract_mean_flow())
    };
    let reference_start = t_len - n_max;
    let reference = fit(reference_start, n_max)?;
    let mut rows = Vec::new();
    for &n in window_lengths {
        let segment = if reference_start >= n { reference_start } else { t_len };
        let mut total = 0.0;
        let mut count = 0;
        for start in 0..=segment - n {
            let f = fit(start, n)?;
            total += compare_fields(&f, &reference, border)?.field_distance;
            count += 1;
        }
        rows.push(ConvergenceRow {
            n,
            distance: total / count as f64,
            windows: count,
        });
    }
    Ok(ConvergenceTable {
        rows,
        reference_start,
        reference_length: n_max,
        border,
    })
}

/// Unit-area histogram of flow speeds after removing the mean flow.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedHistogram {
    pub bin_width: f64,
    pub centers: Vec<f64>,
    pub density: Vec<f64>,
    pub rms: f64,
    pub median: f64,
    pub max: f64,
}

impl SpeedHistogram {
    pub fn area(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_width
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_center,density\n");
        for (c, d) in self.centers.iter().zip(&self.density) {
            out.push_str(&format!("{c:e},{d:e}\n"));
        }
        out
    }
}

/// `unit_scale` multiplies speeds (e.g. km/s per pixel/frame); `bin_width`
/// is in the scaled unit.
pub fn speed_histogram(field: &Field, bin_width: f64, unit_scale: Option<f64>) -> Result<SpeedHistogram> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return arg_err(format!("bin width must be positive, got {bin_width}"));
    }
    let scale = unit_scale.unwrap_or(1.0);
    let mut speeds: Vec<f64> = field.minus_mean().speed().iter().map(|s| s * scale).collect();
    let max = speeds.iter().cloned().fold(0.0, f64::max);
    let bins = (max / bin_width).floor() as usize + 1;
    let mut counts = vec![0usize; bins];
    for s in &speeds {
        counts[((s / bin_width).floor() as usize).min(bins - 1)] += 1;
    }
    let total = speeds.len().max(1) as f64;
    let rms = (speeds.iter().map(|s| s * s).sum::<f64>() / total).sqrt();
    Ok(SpeedHistogram {
        bin_width,
        centers: (0..bins).map(|b| (b as f64 + 0.5) * bin_width).collect(),
        density: counts.iter().map(|&c| c as f64 / (total * bin_width)).collect(),
        rms,
        median: median(&mut speeds),
        max,
    })
}

/// Error magnitude `|v_true - v_fit|` along the middle row.
pub fn boundary_residual_profile(truth: &Field, fit: &Field) -> Result<Vec<f64>> {
    let d = truth.difference(fit)?;
    let row = truth.dim().0 / 2;
    Ok(d.vx
        .row(row)
        .iter()
        .zip(d.vy.row(row).iter())
        .map(|(a, b)| a.hypot(*b))
        .collect())
}

/// Decay of boundary error away from the left and right edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GibbsCheck {
    /// Pixels within this distance of an edge count as edge-adjacent.
    pub edge_width: usize,
    pub left_peak: f64,
    pub right_peak: f64,
    /// Largest interior value over the peak of its nearer edge.
    pub ratio: f64,
    pub passed: bool,
}

pub const GIBBS_RATIO: f64 = 1.0 / 3.0;

/// Interior pixels (farther than `edge_width` from both ends) must stay
/// below a third of the peak error next to their nearer edge.
pub fn gibbs_check(profile: &[f64], edge_width: usize) -> Result<GibbsCheck> {
    let n = profile.len();
    if edge_width == 0 || 2 * edge_width + 1 > n {
        return arg_err(format!("edge width {edge_width} does not fit a profile of {n}"));
    }
    let left_peak = profile[..=edge_width].iter().cloned().fold(0.0, f64::max);
    let right_peak = profile[n - 1 - edge_width..].iter().cloned().fold(0.0, f64::max);
    let mut ratio: f64 = 0.0;
    for (x, &e) in profile.iter().enumerate() {
        let (dl, dr) = (x, n - 1 - x);
        if dl <= edge_width || dr <= edge_width {
            continue;
        }
        let peak = if dl <= dr { left_peak } else { right_peak };
        ratio = ratio.max(if peak > 0.0 { e / peak } else if e > 0.0 { f64::INFINITY } else { 0.0 });
    }
    Ok(GibbsCheck {
        edge_width,
        left_peak,
        right_peak,
        ratio,
        passed: ratio < GIBBS_RATIO,
    })
}

/// Row means of `v_x`.
pub fn zonal_profile(field: &Field) -> Vec<f64> {
    field.vx.rows().into_iter().map(|r| r.mean().unwrap_or(0.0)).collect()
}

/// Two-column CSV with a header.
pub fn profile_csv(values: &[f64]) -> String {
    let mut out = String::from("index,value\n");
    for (i, v) in values.iter().enumerate() {
        out.push_str(&format!("{i},{v:e}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solve::estimate;
    use crate::spectral::{hexagonal_field, random_field};
    use crate::synth::{advect, make_texture, AdvectionConfig};
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn advected(n: usize, rms: f64, frames: usize, seed: u64) -> (ImageCube, SpectralVelocity) {
        let (h, w) = (64, 64);
        let tex = make_texture(w, h, 12.0, seed).unwrap();
        let v = random_field(n, n, rms, seed + 1, w, h).unwrap();
        let (vx, vy) = v.evaluate(h, w).unwrap();
        let cfg = AdvectionConfig {
            n_frames: frames,
            ..AdvectionConfig::default()
        };
        (advect(&tex, (&vx, &vy), &cfg).unwrap(), v)
    }

    fn random_grid(h: usize, w: usize, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::new(
            Array2::from_shape_fn((h, w), |_| rng.random::<f64>() - 0.5),
            Array2::from_shape_fn((h, w), |_| rng.random::<f64>() - 0.5),
        )
        .unwrap()
    }

    #[test]
    fn static_cube_has_zero_chi0() {
        let tex = make_texture(32, 32, 6.0, 1).unwrap();
        let cube = ImageCube::from_frames(&[tex.clone(), tex.clone(), tex]).unwrap();
        let zero = SpectralVelocity::zeros(1, 1, 32, 32);
        let m = merit(&cube, &zero).unwrap();
        assert_eq!((m.chi0, m.chi2), (0.0, 0.0));
        assert_eq!(m.samples, 2 * 28 * 28);
        let v = random_field(1, 1, 0.3, 2, 32, 32).unwrap();
        assert!(merit(&cube, &v).unwrap().chi2 > 0.0);
        assert!(merit(&cube, &SpectralVelocity::zeros(1, 1, 16, 32)).is_err());
    }

    #[test]
    fn true_field_nearly_zeroes_the_merit() {
        let (cube, truth) = advected(2, 0.2, 4, 3);
        let m = merit(&cube, &truth).unwrap();
        assert!(m.chi2 / m.chi0 < 1e-3, "ratio {}", m.chi2 / m.chi0);
    }

    #[test]
    fn fit_beats_scaled_fit_and_parabola_minimum_is_one() {
        let (cube, _) = advected(2, 0.3, 5, 5);
        let (v, _) = estimate(&cube, 2, 2, &EstimateOptions::default()).unwrap();
        let f = |t: f64| merit(&cube, &v.scaled(t)).unwrap().chi2;
        let (f0, f1, f2) = (f(0.0), f(1.0), f(2.0));
        assert!(f1 < f2);
        let c = (f0 - 2.0 * f1 + f2) / 2.0;
        let b = f1 - f0 - c;
        let t_min = -b / (2.0 * c);
        assert!((t_min - 1.0).abs() < 1e-8, "t* = {t_min}");
    }

    #[test]
    fn gradient_vanishes_at_the_fit() {
        let (cube, _) = advected(2, 0.3, 4, 8);
        let (v, _) = estimate(&cube, 2, 2, &EstimateOptions::default()).unwrap();
        let probes: Vec<_> = (0..4).map(|s| random_field(2, 2, 1.0, 40 + s, 64, 64).unwrap()).collect();
        let g = merit_gradient_check(&cube, &v, &probes, 1e-3).unwrap();
        assert!(g < 1e-6, "normalized gradient {g}");
        // a perturbed field is visibly off the minimum
        let off = v.combine(1.0, &probes[0], 0.05).unwrap();
        assert!(merit_gradient_check(&cube, &off, &probes, 1e-3).unwrap() > 1e-3);
    }

    #[test]
    fn identical_and_opposite_fields() {
        let a = random_grid(20, 24, 1);
        let m = compare_fields(&a, &a, 3).unwrap();
        assert_eq!(m.field_distance, 0.0);
        assert!((m.correlation - 1.0).abs() < 1e-12);
        let neg = Field::new(-&a.vx, -&a.vy).unwrap();
        assert!((compare_fields(&a, &neg, 3).unwrap().correlation + 1.0).abs() < 1e-12);
        assert!(compare_fields(&a, &random_grid(20, 20, 1), 0).is_err());
        assert!(compare_fields(&a, &a, 10).is_err());
    }

    #[test]
    fn distance_matches_pixel_loop() {
        let (a, b) = (random_grid(30, 26, 2), random_grid(30, 26, 3));
        let border = 4;
        let m = compare_fields(&a, &b, border).unwrap();
        let (mut sum, mut n, mut ref2) = (0.0, 0.0, 0.0);
        for y in border..30 - border {
            for x in border..26 - border {
                let dx = a.vx[[y, x]] - b.vx[[y, x]];
                let dy = a.vy[[y, x]] - b.vy[[y, x]];
                sum += dx * dx + dy * dy;
                ref2 += b.vx[[y, x]].powi(2) + b.vy[[y, x]].powi(2);
                n += 1.0;
            }
        }
        assert!((m.field_distance - (sum / n).sqrt()).abs() < 1e-14);
        assert!((m.relative_error - (sum / ref2).sqrt()).abs() < 1e-14);
        assert_eq!(m.pixels, n as usize);
    }

    #[test]
    fn metrics_are_translation_invariant() {
        let (a, b) = (random_grid(16, 16, 4), random_grid(16, 16, 5));
        let roll = |f: &Field| {
            let r = |m: &Array2<f64>| Array2::from_shape_fn((16, 16), |(y, x)| m[[(y + 3) % 16, (x + 5) % 16]]);
            Field::new(r(&f.vx), r(&f.vy)).unwrap()
        };
        let (m1, m2) = (
            compare_fields(&a, &b, 0).unwrap(),
            compare_fields(&roll(&a), &roll(&b), 0).unwrap(),
        );
        assert!((m1.field_distance - m2.field_distance).abs() < 1e-14);
        assert!((m1.correlation - m2.correlation).abs() < 1e-14);
    }

    #[test]
    fn default_border_is_half_wavelength() {
        assert_eq!(default_border(4, 4, 256, 256), 32);
        assert_eq!(default_border(8, 2, 64, 256), 16);
        assert_eq!(default_border(0, 0, 64, 64), BORDER);
        assert_eq!(default_border(1, 1, 64, 64), 16);
    }

    /// Translating paraboloid: `v = (U, V)` satisfies the discrete constraint
    /// exactly for every pair.
    fn bowl_cube(frames: usize) -> ImageCube {
        let (u, v) = (0.3, -0.2);
        ImageCube::new(Array3::from_shape_fn((frames, 40, 40), |(t, y, x)| {
            let (px, py) = (x as f64 - 20.0 - u * t as f64, y as f64 - 20.0 - v * t as f64);
            0.5 * (px * px + py * py)
        }))
        .unwrap()
    }

    #[test]
    fn noiseless_convergence_is_immediate() {
        let table = convergence_study(&bowl_cube(16), 1, 1, &[2, 4, 8], &EstimateOptions::default()).unwrap();
        assert_eq!(table.reference_start, 8);
        assert_eq!(table.rows[0].windows, 7);
        assert_eq!(table.rows[2].windows, 1);
        for r in &table.rows {
            assert!(r.distance < 1e-8, "{r:?}");
        }
        assert!(table.to_csv().starts_with("N,distance\n2,"));
    }

    #[test]
    fn short_cube_convergence_edge_case() {
        let table = convergence_study(&bowl_cube(3), 1, 1, &[2], &EstimateOptions::default()).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert!(table.rows[0].distance.is_finite());
        assert!(convergence_study(&bowl_cube(3), 1, 1, &[4], &EstimateOptions::default()).is_err());
    }

    #[test]
    fn window_spectra_match_direct_estimates() {
        let (cube, _) = advected(1, 0.2, 6, 11);
        let table = convergence_study(&cube, 1, 1, &[3], &EstimateOptions::default()).unwrap();
        // reference = frames 3..6, one window at 0
        let border = default_border(1, 1, 64, 64);
        let fit = |s, n| {
            let (v, _) = estimate(&cube.window(s, n).unwrap(), 1, 1, &EstimateOptions::default()).unwrap();
            Field::from_velocity(&v.subtract_mean_flow()).unwrap()
        };
        let r = fit(3, 3);
        let expect = compare_fields(&fit(0, 3), &r, border).unwrap().field_distance;
        assert_eq!(table.rows[0].windows, 1);
        assert!((table.rows[0].distance - expect).abs() < 1e-10 * expect);
    }

    #[test]
    fn log_slope_of_power_law() {
        let pts: Vec<_> = [2.0f64, 5.0, 10.0, 40.0].iter().map(|n| (n.ln(), (3.0 / n).ln())).collect();
        assert!((log_slope(&pts).unwrap() + 1.0).abs() < 1e-12);
        assert!(log_slope(&pts[..1]).is_none());
    }

    #[test]
    fn uniform_field_histogram() {
        let f = Field::uniform(10, 10, 0.4, -0.1);
        let h = speed_histogram(&f, 0.05, None).unwrap();
        assert_eq!(h.density.len(), 1);
        assert!((h.area() - 1.0).abs() < 1e-12);
        assert!(speed_histogram(&f, 0.0, None).is_err());
    }

    #[test]
    fn hexagonal_histogram_matches_binning() {
        let (vx, vy) = hexagonal_field(0.5, 32.0, 64, 64).unwrap();
        let f = Field::new(vx, vy).unwrap();
        let h = speed_histogram(&f, 0.02, Some(0.7)).unwrap();
        assert!((h.area() - 1.0).abs() < 1e-12);
        let (mu, mv) = f.mean();
        let speeds: Vec<f64> = f
            .vx
            .iter()
            .zip(f.vy.iter())
            .map(|(a, b)| 0.7 * ((a - mu).powi(2) + (b - mv).powi(2)).sqrt())
            .collect();
        for (k, d) in h.density.iter().enumerate() {
            let lo = k as f64 * 0.02;
            let count = speeds.iter().filter(|s| **s >= lo && **s < lo + 0.02).count();
            assert!((d * 0.02 * speeds.len() as f64 - count as f64).abs() < 1e-9, "bin {k}");
        }
        let max = speeds.iter().cloned().fold(0.0, f64::max);
        assert!((h.max - max).abs() < 1e-15);
        assert!(h.to_csv().starts_with("bin_center,density\n"));
    }

    #[test]
    fn profiles() {
        let a = random_grid(12, 20, 6);
        let p = boundary_residual_profile(&a, &a).unwrap();
        assert_eq!(p.len(), 20);
        assert!(p.iter().all(|v| *v == 0.0));
        let c = Field::uniform(6, 5, 1.5, 0.0);
        assert!(zonal_profile(&c).iter().all(|v| (v - 1.5).abs() < 1e-15));
        let (h, w) = (16, 9);
        let wave = Field::new(
            Array2::from_shape_fn((h, w), |(y, _)| (2.0 * PI * y as f64 / h as f64).cos()),
            Array2::zeros((h, w)),
        )
        .unwrap();
        for (y, v) in zonal_profile(&wave).iter().enumerate() {
            assert!((v - (2.0 * PI * y as f64 / h as f64).cos()).abs() < 1e-12);
        }
        let r = random_grid(7, 11, 9);
        for (y, v) in zonal_profile(&r).iter().enumerate() {
            let mean = (0..11).map(|x| r.vx[[y, x]]).sum::<f64>() / 11.0;
            assert!((v - mean).abs() < 1e-15);
        }
        assert!(profile_csv(&[1.0]).starts_with("index,value\n0,1e0"));
    }

    #[test]
    fn gibbs_check_cases() {
        let mut p = vec![0.1; 40];
        p[0] = 1.0;
        p[39] = 0.6;
        let g = gibbs_check(&p, 5).unwrap();
        assert!(g.passed);
        assert!((g.ratio - 0.1 / 0.6).abs() < 1e-15);
        p[30] = 0.3;
        assert!(!gibbs_check(&p, 5).unwrap().passed);
        assert!(gibbs_check(&p, 20).is_err());
    }
}
