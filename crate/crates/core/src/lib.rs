//! Dominant eigenpairs of molecular spatial transfer operators, computed both
//! by Ulam discretization on the full configuration space and by a mean-field
//! product approximation on per-subsystem spaces.

pub mod error;
pub mod integrate;
pub mod meanfield;
pub mod model;
pub mod partition;
pub mod rng;
pub mod sampling;
pub mod spectral;
pub mod ulam;
pub mod units;

pub use error::{Error, Result};
