use thiserror::Error;

/// Errors raised by the numerical stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dictionary degree {0} exceeds the supported maximum of {max}", max = crate::model::MAX_DEGREE)]
    DegreeTooLarge(usize),

    #[error("path {path} diverged at step {step} (|x| = {value:e})")]
    Divergence { path: usize, step: usize, value: f64 },

    #[error("negative squared diffusion {value:e} at x = {x}")]
    NegativeDiffusion { x: f64, value: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("underdetermined least squares: {rows} rows for {cols} columns")]
    Underdetermined { rows: usize, cols: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("endpoint unreachable: normalizer {0:e} vanishes at this horizon and domain")]
    UnreachableEndpoint(f64),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
