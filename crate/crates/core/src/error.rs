use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("{what} supports at most n = {cap} agents, got n = {n}")]
    Capacity {
        what: &'static str,
        n: usize,
        cap: usize,
    },
    #[error("trajectory must contain at least one step")]
    EmptyTrajectory,
    #[error("state stream ended before an update pair was available")]
    StreamUnderflow,
    #[error("stationary solve did not reach tolerance {tol:e} within {max_iter} iterations (residual {residual:e})")]
    IterationLimit {
        tol: f64,
        max_iter: u64,
        residual: f64,
    },
    #[error("conditioning state {state} carries stationary mass {mass:e}, below the degeneracy floor")]
    DegenerateMass { state: usize, mass: f64 },
    #[error("non-finite score in parameter block {block}")]
    NonFiniteScore { block: usize },
    #[error("matrix is not a kernel of the model family: {reason}")]
    ModelMismatch { reason: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{origin}:{line}: {msg}")]
    Parse {
        origin: String,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
