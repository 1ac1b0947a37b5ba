use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("signal of length {len} is too short for a Hankel matrix of order {order}")]
    InvalidOrder { len: usize, order: usize },

    #[error("simulation diverged: non-finite state at step {step}")]
    Divergence { step: usize },

    #[error("scale factor must be positive and finite, got {0}")]
    InvalidScale(f64),

    #[error("no persistently exciting input of order {order} after {attempts} draws")]
    ExcitationFailure { order: usize, attempts: usize },

    #[error("X1 is not full row rank (rank {rank} < {rows}); no finite gamma exists")]
    NoFiniteGamma { rank: usize, rows: usize },

    #[error("remainder matrix D0 is required (oracle mode)")]
    OracleRequired,

    #[error("alpha must be positive, got {0}")]
    InvalidAlpha(f64),

    #[error(
        "X0*Q is numerically singular (sigma_min = {min_sv:e}, sigma_max = {max_sv:e}); \
         cannot extract a controller"
    )]
    Extraction { min_sv: f64, max_sv: f64 },

    #[error("need at least {needed} usable sweep rows, got {found}")]
    InsufficientRows { needed: usize, found: usize },

    #[error("invalid epsilon grid: {0}")]
    InvalidGrid(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
