use thiserror::Error;

/// Errors raised by estimation, simulation and I/O routines.
#[derive(Debug, Error)]
pub enum SpcrError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("at least {needed} points required, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("invalid direction: {0}")]
    InvalidDirection(String),
    /// Coordinate descent ran out of sweeps; the last iterate is kept in
    /// column-major order so callers can inspect or reuse it.
    #[error("no convergence after {iterations} sweeps (last change {last_change:e})")]
    Convergence {
        iterations: usize,
        last_change: f64,
        rows: usize,
        cols: usize,
        last_iterate: Vec<f64>,
    },
    #[error("model fitting failed: {0}")]
    Fit(String),
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
}

impl SpcrError {
    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SpcrError::Numerical(_)
                | SpcrError::NotPsd(_)
                | SpcrError::Convergence { .. }
                | SpcrError::Fit(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, SpcrError>;
