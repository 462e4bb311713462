use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed model or scenario input.
    #[error("configuration error: {0}")]
    Config(String),

    /// Argument outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected} users, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid weight vector: {0}")]
    InvalidWeights(String),

    /// A policy failed or produced unusable weights during a run.
    #[error("policy error at slot {slot}: {message}")]
    Policy { slot: usize, message: String },

    #[error("no weight vector meets residual tolerance {tol:e}; best residual {best_residual:e} at mu={best_mu:?}")]
    QpsNoFixedPoint {
        tol: f64,
        best_residual: f64,
        best_mu: Vec<f64>,
    },

    #[error("drain did not finish within {cap} slots (remaining queue {remaining:?})")]
    DrainCap { cap: usize, remaining: Vec<f64> },

    #[error("grid construction failed at column {column}, cell {cell} (corner {corner:?}): {reason}")]
    GridConstruction {
        column: usize,
        cell: usize,
        corner: [f64; 2],
        reason: String,
    },

    #[error("solver error: {0}")]
    Solver(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from invalid input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Domain(_) | Error::Dimension { .. }
        )
    }
}
