use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration {q:?} lies outside the model domain (coordinate {index})")]
    Domain { q: Vec<f64>, index: usize },

    #[error("model consistency: {reason} at q = {q:?}")]
    ModelConsistency { q: Vec<f64>, reason: String },

    #[error("non-finite vector field component {index} at z = {z:?}")]
    Evaluation { z: Vec<f64>, index: usize },

    #[error("degenerate geometry at q = {q:?}: {reason}")]
    Boundary { q: Vec<f64>, reason: String },

    #[error("trajectory blew up at step {step}")]
    BlowUp { step: usize },

    #[error("invalid integrator spec: {0}")]
    Integrator(String),

    #[error("subsystem layout: {0}")]
    Layout(String),

    #[error("partition: {0}")]
    Partition(String),

    #[error("undefined probability: {0}")]
    UndefinedProbability(String),

    #[error("effective model not positive definite at table node {node}")]
    EffectiveModel { node: usize },

    #[error("query {q:?} outside effective-Hamiltonian table range")]
    Extrapolation { q: Vec<f64> },

    #[error("spectral solver: {message} (residuals {residuals:?})")]
    Spectral {
        message: String,
        residuals: Vec<f64>,
    },

    #[error("degenerate sign decomposition: eigenvector has a single sign")]
    DegenerateDecomposition,

    #[error("comparison: {0}")]
    Comparison(String),

    #[error("config: {0}")]
    Config(String),

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
