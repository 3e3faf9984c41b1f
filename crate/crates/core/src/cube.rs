//! Image cubes: a time series of equally sized intensity frames with
//! per-frame validity flags, plus the `.ofc` binary format.
//!
//! Layout of an `.ofc` file (all little-endian):
//!
//! ```text
//! "OFC1"  u32 T  u32 H  u32 W  u32 dtype(0=f32,1=f64)
//! f64 pixel_scale (0 = unset)  f64 cadence (0 = unset)
//! T bytes validity flags (1 = valid)
//! T*H*W samples, frame-major then row-major
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{arg_err, FlowError, Result};

pub const CUBE_MAGIC: &[u8; 4] = b"OFC1";
const HEADER_LEN: usize = 4 + 4 * 4 + 8 * 2;

/// On-disk sample width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn code(self) -> u32 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// A `T x H x W` intensity sequence. Immutable once built; every transform
/// returns a new cube.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageCube {
    frames: Array3<f64>,
    valid: Vec<bool>,
    pixel_scale: Option<f64>,
    cadence: Option<f64>,
}

impl ImageCube {
    /// Wrap a frame array; all frames start out valid.
    pub fn new(frames: Array3<f64>) -> Result<Self> {
        if frames.iter().any(|v| !v.is_finite()) {
            return arg_err("cube contains non-finite intensities");
        }
        let t = frames.dim().0;
        Ok(Self {
            frames,
            valid: vec![true; t],
            pixel_scale: None,
            cadence: None,
        })
    }

    pub fn from_frames(frames: &[Array2<f64>]) -> Result<Self> {
        let Some(first) = frames.first() else {
            return arg_err("cube needs at least one frame");
        };
        let (h, w) = first.dim();
        let mut data = Array3::zeros((frames.len(), h, w));
        for (t, f) in frames.iter().enumerate() {
            if f.dim() != (h, w) {
                return arg_err(format!(
                    "frame {t} has shape {:?}, expected {:?}",
                    f.dim(),
                    (h, w)
                ));
            }
            data.index_axis_mut(Axis(0), t).assign(f);
        }
        Self::new(data)
    }

    pub fn with_valid(mut self, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != self.n_frames() {
            return arg_err("validity flag count does not match frame count");
        }
        self.valid = valid;
        Ok(self)
    }

    pub fn with_units(mut self, pixel_scale: Option<f64>, cadence: Option<f64>) -> Self {
        self.pixel_scale = pixel_scale.filter(|v| *v > 0.0);
        self.cadence = cadence.filter(|v| *v > 0.0);
        self
    }

    pub fn n_frames(&self) -> usize {
        self.frames.dim().0
    }

    pub fn height(&self) -> usize {
        self.frames.dim().1
    }

    pub fn width(&self) -> usize {
        self.frames.dim().2
    }

    pub fn frames(&self) -> &Array3<f64> {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> ArrayView2<'_, f64> {
        self.frames.index_axis(Axis(0), t)
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, t: usize) -> bool {
        self.valid[t]
    }

    pub fn pixel_scale(&self) -> Option<f64> {
        self.pixel_scale
    }

    pub fn cadence(&self) -> Option<f64> {
        self.cadence
    }

    /// Frames `start..start + len` as a new cube, flags and units preserved.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.n_frames() {
            return arg_err(format!(
                "window {start}..{} outside cube of {} frames",
                start + len,
                self.n_frames()
            ));
        }
        Ok(Self {
            frames: self
                .frames
                .slice(ndarray::s![start..start + len, .., ..])
                .to_owned(),
            valid: self.valid[start..start + len].to_vec(),
            pixel_scale: self.pixel_scale,
            cadence: self.cadence,
        })
    }

    /// Same frames in reverse time order.
    pub fn reversed(&self) -> Self {
        let mut frames = self.frames.clone();
        frames.invert_axis(Axis(0));
        let mut valid = self.valid.clone();
        valid.reverse();
        Self {
            frames: frames.as_standard_layout().to_owned(),
            valid,
            pixel_scale: self.pixel_scale,
            cadence: self.cadence,
        }
    }

    /// Multiply every intensity by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let mut out = self.clone();
        out.frames.mapv_inplace(|v| v * factor);
        if out.frames.iter().any(|v| !v.is_finite()) {
            return arg_err("scaling produced non-finite intensities");
        }
        Ok(out)
    }

    /// Add a `T x H x W` field (same shape) to every frame, e.g. an
    /// oscillation contaminant.
    pub fn plus(&self, other: &Array3<f64>) -> Result<Self> {
        if other.dim() != self.frames.dim() {
            return arg_err("added field shape does not match cube");
        }
        let mut out = self.clone();
        out.frames += other;
        Ok(out)
    }

    /// Perturb every pixel of every valid frame by independent `N(0, sigma^2)`.
    pub fn add_gaussian_noise(&self, sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return arg_err(format!("noise sigma must be finite and >= 0, got {sigma}"));
        }
        let mut out = self.clone();
        if sigma == 0.0 {
            return Ok(out);
        }
        let normal = Normal::new(0.0, sigma).expect("sigma validated");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (t, mut frame) in out.frames.axis_iter_mut(Axis(0)).enumerate() {
            if !self.valid[t] {
                continue;
            }
            frame.mapv_inplace(|v| v + normal.sample(&mut rng));
        }
        Ok(out)
    }

    /// Multiply each frame pointwise by a positive `H x W` profile.
    pub fn apply_gradient(&self, profile: &Array2<f64>) -> Result<Self> {
        if profile.dim() != (self.height(), self.width()) {
            return arg_err(format!(
                "profile shape {:?} does not match frame shape {:?}",
                profile.dim(),
                (self.height(), self.width())
            ));
        }
        if let Some(bad) = profile.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return arg_err(format!("profile entries must be positive, found {bad}"));
        }
        let mut out = self.clone();
        for mut frame in out.frames.axis_iter_mut(Axis(0)) {
            frame *= profile;
        }
        Ok(out)
    }

    /// Flag the listed frames as missing.
    pub fn mark_missing(&self, indices: &[usize]) -> Result<Self> {
        let mut out = self.clone();
        for &i in indices {
            if i >= self.n_frames() {
                return arg_err(format!(
                    "frame index {i} out of range for {} frames",
                    self.n_frames()
                ));
            }
            out.valid[i] = false;
        }
        Ok(out)
    }

    /// Flag every frame whose samples are all exactly zero.
    pub fn flag_blank_frames(mut self) -> Self {
        for (t, frame) in self.frames.axis_iter(Axis(0)).enumerate() {
            if frame.iter().all(|v| *v == 0.0) {
                self.valid[t] = false;
            }
        }
        self
    }

    pub fn to_bytes(&self, dtype: DType) -> Vec<u8> {
        let (t, h, w) = self.frames.dim();
        let mut out = Vec::with_capacity(HEADER_LEN + t + t * h * w * dtype.width());
        out.extend_from_slice(CUBE_MAGIC);
        for v in [t as u32, h as u32, w as u32, dtype.code()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.pixel_scale.unwrap_or(0.0).to_le_bytes());
        out.extend_from_slice(&self.cadence.unwrap_or(0.0).to_le_bytes());
        out.extend(self.valid.iter().map(|v| u8::from(*v)));
        for v in self.frames.iter() {
            match dtype {
                DType::F32 => out.extend_from_slice(&(*v as f32).to_le_bytes()),
                DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(FlowError::Format("file shorter than cube header".into()));
        }
        if &bytes[..4] != CUBE_MAGIC {
            return Err(FlowError::Format(format!(
                "bad magic {:?}, expected \"OFC1\"",
                String::from_utf8_lossy(&bytes[..4])
            )));
        }
        let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let f64_at = |off: usize| f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        let (t, h, w) = (u32_at(4) as usize, u32_at(8) as usize, u32_at(12) as usize);
        let dtype = match u32_at(16) {
            0 => DType::F32,
            1 => DType::F64,
            other => return Err(FlowError::Format(format!("unknown dtype code {other}"))),
        };
        let pixel_scale = f64_at(20);
        let cadence = f64_at(28);
        let samples = t
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .ok_or_else(|| FlowError::Size(format!("cube dimensions {t}x{h}x{w} overflow")))?;
        let expected = samples
            .checked_mul(dtype.width())
            .and_then(|v| v.checked_add(HEADER_LEN + t))
            .ok_or_else(|| FlowError::Size(format!("cube dimensions {t}x{h}x{w} overflow")))?;
        if bytes.len() != expected {
            return Err(FlowError::Format(format!(
                "expected {expected} bytes for {t}x{h}x{w} cube, found {}",
                bytes.len()
            )));
        }
        let flags = &bytes[HEADER_LEN..HEADER_LEN + t];
        let data = &bytes[HEADER_LEN + t..];
        let values: Vec<f64> = match dtype {
            DType::F32 => data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::Format("cube contains non-finite samples".into()));
        }
        let frames = Array3::from_shape_vec((t, h, w), values)
            .map_err(|e| FlowError::Size(e.to_string()))?;
        Ok(Self {
            frames,
            valid: flags.iter().map(|b| *b == 1).collect(),
            pixel_scale: (pixel_scale > 0.0).then_some(pixel_scale),
            cadence: (cadence > 0.0).then_some(cadence),
        })
    }
}

pub fn save_cube(cube: &ImageCube, path: impl AsRef<Path>) -> Result<()> {
    save_cube_as(cube, path, DType::F64)
}

pub fn save_cube_as(cube: &ImageCube, path: impl AsRef<Path>, dtype: DType) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    f.write_all(&cube.to_bytes(dtype))?;
    f.flush()?;
    Ok(())
}

/// Read an `.ofc` cube. All-zero frames are flagged missing.
pub fn load_cube(path: impl AsRef<Path>) -> Result<ImageCube> {
    let bytes = fs::read(path)?;
    Ok(ImageCube::from_bytes(&bytes)?.flag_blank_frames())
}

/// Read a binary (P5) PGM image, 8- or 16-bit, as floating point.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    parse_pgm(&fs::read(path)?)
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Array2<f64>> {
    let mut pos = 0usize;
    let mut next_token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(FlowError::Format("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if next_token()? != "P5" {
        return Err(FlowError::Format("only binary P5 PGM is supported".into()));
    }
    let mut num = || -> Result<usize> {
        next_token()?
            .parse()
            .map_err(|_| FlowError::Format("bad number in PGM header".into()))
    };
    let (w, h, maxval) = (num()?, num()?, num()?);
    if maxval == 0 || maxval > 65535 {
        return Err(FlowError::Format(format!("PGM maxval {maxval} out of range")));
    }
    // a single whitespace byte separates the header from the raster
    let data = &bytes[pos + 1..];
    let bpp = if maxval < 256 { 1 } else { 2 };
    let n = w
        .checked_mul(h)
        .ok_or_else(|| FlowError::Size("PGM dimensions overflow".into()))?;
    if data.len() < n * bpp {
        return Err(FlowError::Format("PGM raster truncated".into()));
    }
    let values = (0..n)
        .map(|i| match bpp {
            1 => data[i] as f64,
            _ => u16::from_be_bytes([data[2 * i], data[2 * i + 1]]) as f64,
        })
        .collect();
    Array2::from_shape_vec((h, w), values).map_err(|e| FlowError::Size(e.to_string()))
}
