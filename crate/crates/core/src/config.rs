//! Run configuration shared by the command-line tools and experiment
//! recipes.

use serde::{Deserialize, Serialize};

use crate::deriv::MissingPolicy;
use crate::error::{arg_err, Result};
use crate::solve::{EstimateOptions, SolveMethod};

/// Physical units attached to a cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Units {
    /// Kilometres per pixel.
    pub pixel_scale: f64,
    /// Seconds per frame.
    pub cadence: f64,
}

impl Units {
    pub fn new(pixel_scale: f64, cadence: f64) -> Result<Self> {
        if !(pixel_scale > 0.0 && pixel_scale.is_finite()) || !(cadence > 0.0 && cadence.is_finite()) {
            return arg_err(format!(
                "pixel scale and cadence must be positive, got {pixel_scale} km/px and {cadence} s"
            ));
        }
        Ok(Self { pixel_scale, cadence })
    }

    /// km/s per pixel/frame.
    pub fn speed_factor(&self) -> f64 {
        self.pixel_scale / self.cadence
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n_x: usize,
    pub n_y: usize,
    pub solver: SolveMethod,
    pub tol: f64,
    pub max_iter: usize,
    pub missing: MissingPolicy,
    pub units: Option<Units>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let o = EstimateOptions::default();
        Self {
            n_x: 8,
            n_y: 8,
            solver: o.method,
            tol: o.tol,
            max_iter: o.max_iter,
            missing: o.missing,
            units: None,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Checks independent of the data.
    pub fn check(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return arg_err(format!("tolerance must lie in (0, 1), got {}", self.tol));
        }
        if self.max_iter == 0 {
            return arg_err("max_iter must be positive");
        }
        if let Some(u) = self.units {
            Units::new(u.pixel_scale, u.cadence)?;
        }
        Ok(())
    }

    /// Full validation against a frame size.
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        self.check()?;
        if 4 * self.n_x >= width || 4 * self.n_y >= height {
            return arg_err(format!(
                "{}x{} modes need 4n < frame size, frames are {height}x{width}",
                self.n_x, self.n_y
            ));
        }
        Ok(())
    }

    pub fn options(&self) -> EstimateOptions {
        EstimateOptions {
            method: self.solver,
            tol: self.tol,
            max_iter: self.max_iter,
            missing: self.missing,
        }
    }
}
