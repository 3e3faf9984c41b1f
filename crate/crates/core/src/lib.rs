//! Spectral optical flow.
//!
//! Estimates a smooth 2-D velocity field from an image time series by
//! least-squares fitting a truncated Fourier expansion of the velocity to
//! the advection constraint `dI/dt + v . grad I = 0`, summed over every
//! pixel and frame pair of the cube.
//!
//! Pipeline: [`deriv::accumulate_products`] forms the time-accumulated
//! derivative products, [`assemble`] transforms them into the normal
//! equations for the Fourier amplitudes, and [`solve`] solves that system
//! either directly (Cholesky) or iteratively (conjugate gradients on an FFT
//! matvec). [`solve::estimate`] chains the three.
//!
//! [`synth`] manufactures ground-truth cubes by advecting a texture with a
//! known flow, and [`metrics`] and [`experiment`] hold the instruments used
//! to validate the estimator against them.

pub mod assemble;
pub mod config;
pub mod cube;
pub mod deriv;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod linalg;
pub mod metrics;
pub mod solve;
pub mod spectral;
pub mod synth;

pub use cube::{load_cube, save_cube, ImageCube};
pub use deriv::{DerivativeProducts, MissingPolicy};
pub use error::{FlowError, Result};
pub use solve::{estimate, EstimateOptions, SolveMethod, SolveReport};
pub use spectral::SpectralVelocity;
