//! Batch experiment runner for full and mean-field transfer-operator computations.

pub mod compare;
pub mod config;
pub mod formats;
pub mod run;

use mftransfer::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MODEL: i32 = 3;
pub const EXIT_ASSEMBLY: i32 = 4;
pub const EXIT_SPECTRAL: i32 = 5;
pub const EXIT_COMPARISON: i32 = 6;

/// Process exit code for an error, grouped by the stage that failed.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Domain { .. }
        | Error::ModelConsistency { .. }
        | Error::Evaluation { .. }
        | Error::Boundary { .. }
        | Error::Layout(_)
        | Error::EffectiveModel { .. }
        | Error::Extrapolation { .. } => EXIT_MODEL,
        Error::BlowUp { .. }
        | Error::Integrator(_)
        | Error::Partition(_)
        | Error::UndefinedProbability(_)
        | Error::DegenerateDecomposition => EXIT_ASSEMBLY,
        Error::Spectral { .. } => EXIT_SPECTRAL,
        Error::Comparison(_) => EXIT_COMPARISON,
        Error::Format(_) | Error::Io(_) => EXIT_IO,
    }
}
