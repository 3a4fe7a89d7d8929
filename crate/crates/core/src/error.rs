//! Crate-wide error type.

use num_complex::Complex64;

#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("equilibrium search did not converge in {max_iter} steps (last residual {residual:.3e})")]
    NoConvergence { max_iter: usize, residual: f64 },

    #[error("zero of g - f_average at {x} is not simple: |g'| = {derivative:.3e} <= tol {tol:.3e}")]
    DegenerateZero { x: f64, derivative: f64, tol: f64 },

    #[error("enumeration budget exceeded: needs {needed} items, budget {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },

    #[error("forcing support is empty")]
    EmptySupport,

    #[error("eps = 0 has no reciprocal")]
    ZeroEps,

    #[error("propagator denominator vanishes: eps = {eps}, omega.nu = {s}")]
    SingularPropagator { eps: Complex64, s: f64 },

    #[error("node {node}: no line satisfies the divisor dichotomy (divisor constant estimated on too small a ball?)")]
    ClassificationContradiction { node: usize },

    #[error("not enough data to fit: {reason}")]
    InsufficientData { reason: String },

    #[error("invalid problem spec: {0}")]
    InvalidSpec(String),

    #[error("tree incompatible with problem spec: {0}")]
    InvalidTree(String),

    #[error("spec file I/O: {0}")]
    Io(String),

    #[error("spec file JSON: {0}")]
    Json(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
