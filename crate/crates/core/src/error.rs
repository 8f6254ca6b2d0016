use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("field contains non-finite values")]
    NonFinite,

    #[error("resolvent solver did not converge after {iterations} iterations (residual {residual:e} > tol {tol:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        tol: f64,
    },

    #[error("Picard iteration stalled after {iterations} outer iterations (last difference {last_difference:e})")]
    PicardStall {
        iterations: usize,
        last_difference: f64,
    },

    #[error("noise certification failed: {constant} empirical {empirical:e} exceeds declared {declared:e}")]
    CertificationFailure {
        constant: &'static str,
        empirical: f64,
        declared: f64,
    },

    #[error("control {norm_sq:e} lies outside the ball of radius^2 {bound:e}")]
    ControlOutsideBall { norm_sq: f64, bound: f64 },

    #[error("optimization budget exceeded: {params} control parameters (limit {limit})")]
    BudgetExceeded { params: usize, limit: usize },

    #[error("optimizer stalled with misfit {misfit:e} above tolerance {tol:e}")]
    NoDescent { misfit: f64, tol: f64 },

    #[error("relative entropy of the control is zero")]
    ZeroEntropy,

    #[error("io: {0}")]
    Io(String),

    #[error("parse: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
