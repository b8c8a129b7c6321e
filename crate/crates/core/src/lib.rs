//! Monte Carlo transport for the radiative transfer equation with singular,
//! multifractional scattering kernels.
//!
//! Small angular jumps are replaced by a diffusion on the unit sphere, large
//! jumps are simulated exactly as a thinned Markov chain. A spherical
//! harmonics solver for the homogeneous problem serves as the reference.
//!
//! Modules, bottom-up:
//!
//! - [`medium`]: kernel, diffusion coefficient, jump intensity and bounds.
//! - [`sampling`]: RNG streams and every random variate.
//! - [`transport`]: the particle engine and the parallel batch runner.
//! - [`observables`]: mergeable tallies and the relative-error metric.
//! - [`spectral`]: the spherical harmonics reference solver.
//! - [`config`] and [`app`]: configuration files and the command drivers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod config;
pub mod error;
pub mod medium;
pub mod observables;
pub mod quadrature;
pub mod sampling;
pub mod spectral;
pub mod transport;
pub mod validation;

pub use error::{Error, Result};

/// Vectors in ℝ³, used for both positions and directions.
pub type Vec3 = nalgebra::Vector3<f64>;
