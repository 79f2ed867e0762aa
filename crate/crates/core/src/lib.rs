//! Simulation and kernel estimation for second-order jump-diffusion models.
//!
//! The latent state `X` is a jump-diffusion; only its integral `Y` is
//! observed at spacing `Δ`. The crate simulates such paths, reconstructs `X`
//! from difference quotients of `Y`, computes Nadaraya–Watson estimators of the
//! stationary density, the drift and the second infinitesimal moment, and
//! checks the underlying conditional-moment relations and the estimators'
//! limit theory by Monte Carlo.

pub mod config;
pub mod error;
pub mod estimators;
pub mod generator;
pub mod harness;
pub mod io;
pub mod kernels;
pub mod model;
pub mod par;
pub mod presets;
pub mod quadrature;
pub mod rng;
pub mod simulator;
pub mod stats;

pub use error::{Error, Result};
