use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{what} = {value} lies outside the admissible range [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("point ({x}, {y}) lies outside the domain")]
    OutsideDomain { x: f64, y: f64 },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("series tolerance {tol:e} unreachable: tail bound {tail:e} at n_max = {n_max}")]
    ToleranceUnreachable { tol: f64, tail: f64, n_max: usize },

    #[error("singular configuration: {0}")]
    Singularity(String),

    #[error("degenerate slice at x = {x}: height vanishes")]
    DegenerateSlice { x: f64 },

    #[error("quadrature did not converge: refinement disagreement {disagreement:e}")]
    Quadrature { disagreement: f64 },

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("numerical error: {message} (iterations {iterations}, residual {residual:e})")]
    Numerical {
        message: String,
        iterations: usize,
        residual: f64,
    },

    #[error("level error: {0}")]
    Level(String),

    #[error("prerequisite missing: {0}")]
    Prerequisite(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
