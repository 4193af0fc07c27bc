use thiserror::Error;

/// Errors raised by grid construction, weight computation, estimation and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// No design point carries kernel mass inside the window around `x`.
    #[error("degenerate window at x = {x:?} (h = {h})")]
    DegenerateWindow { x: Vec<f64>, h: f64 },

    /// The local moment matrix is too close to singular; enlarging `h` usually helps.
    #[error("ill-conditioned window at x = {x:?} (h = {h}, min eigenvalue = {min_eigenvalue:e})")]
    IllConditionedWindow {
        x: Vec<f64>,
        h: f64,
        min_eigenvalue: f64,
    },

    #[error("no valid bandwidth among {0} candidates")]
    NoValidBandwidth(usize),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
