use thiserror::Error;

/// Errors produced by the solver library.
///
/// Every variant that can be traced to a point in time carries that time so
/// callers (and the CLI) can name the offending node.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("empty time grid")]
    EmptyGrid,

    #[error("matrix B is not positive definite beyond tolerance (min eigenvalue {min_eig:.6e})")]
    IndefiniteB { min_eig: f64 },

    #[error("time {t} outside [0, {horizon}]")]
    OutOfDomain { t: f64, horizon: f64 },

    #[error("gain denominator singular at t = {t}: smallest eigenvalue {margin:.6e}")]
    SingularGainDenominator { t: f64, margin: f64 },

    #[error("problem has no linear terminal term")]
    MissingLinearTerm,

    #[error("path does not retain its Brownian increments")]
    MissingIncrements,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate volatility at t = {t}: sigma sigma^T - delta I has smallest eigenvalue {margin:.6e}")]
    DegenerateVolatility { t: f64, margin: f64 },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("control weight bound violated at t = {t}: theta = {theta:.6e}, bound = {bound:.6e}")]
    ThetaBoundViolated { t: f64, theta: f64, bound: f64 },

    #[error("invalid problem: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
