//! Pathwise regularisation by noise for McKean–Vlasov systems.
//!
//! The crate builds averaged fields `Γ_{s,t}K(x) = ∫_s^t K(x + Z_r) dr` from a
//! regularising path `Z`, integrates measure-dependent nonlinear Young
//! equations driven by them, and measures mean-field convergence of the
//! associated particle systems in Wasserstein distances.

pub mod averaging;
pub mod error;
mod fft;
pub mod grid;
pub mod io;
pub mod kernels;
pub mod localtime;
pub mod metrics;
pub mod nlyi;
pub mod particles;
pub mod paths;
pub mod rng;
pub mod solver;
pub mod stats;

pub use error::{Error, Result};
pub use grid::{GriddedField, SpatialGrid, TimeGrid};
pub use paths::{HolderEstimate, NoiseKind, SamplePath};
