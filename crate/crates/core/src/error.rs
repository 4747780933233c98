use thiserror::Error;

/// Errors raised by the inference engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric (max relative asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("covariance is not positive definite after regularisation")]
    NotPositiveDefinite,

    #[error("precision sum is singular (factor {factor})")]
    SingularFactor { factor: usize },

    #[error("prior-correction made precision indefinite")]
    IndefinitePrecision,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("shape mismatch: grid has {got} values, lattice has {expected} cells")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("simulation failed: {0}")]
    Simulation(String),

    #[error(
        "factor {factor}: draw cap {cap} exhausted with {accepted} of {wanted} acceptances"
    )]
    DrawCapExhausted {
        factor: usize,
        cap: u64,
        accepted: usize,
        wanted: usize,
    },

    #[error("exact-match sampler cap {cap} exhausted with {accepted} of {wanted} acceptances")]
    EbcCapExhausted {
        cap: u64,
        accepted: usize,
        wanted: usize,
    },

    #[error("{} factor(s) failed: {}", .0.len(), join_errors(.0))]
    Factors(Vec<Error>),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("posterior mass escaped lattice")]
    MassEscaped,

    #[error("lattice mismatch")]
    LatticeMismatch,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

fn join_errors(errors: &[Error]) -> String {
    errors
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
