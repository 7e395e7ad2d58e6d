use thiserror::Error;

/// Errors raised by the identification toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A regressor or simulation needs samples before the start of the signal.
    #[error("requested t = {requested} needs samples before the signal start; first valid t = {first_valid}")]
    Boundary { requested: i64, first_valid: i64 },

    #[error("trajectory evaluated at s = {time} outside its support")]
    OutOfSupport { time: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("input location kind mismatch: {0}")]
    KindMismatch(String),

    #[error("fit metric undefined: test outputs are constant")]
    UndefinedFit,

    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    /// Factorization of a kernel block failed; `dim` is the order of the
    /// first leading minor that is not positive definite.
    #[error("rank deficient: leading {dim}x{dim} block of a {size}x{size} matrix is singular")]
    RankDeficient { dim: usize, size: usize },

    #[error("ill-conditioned system after jitter escalation (condition estimate {condition_estimate:e})")]
    Conditioning { condition_estimate: f64 },

    #[error("impulse-response extraction unsupported: {0}")]
    UnsupportedExtraction(String),

    #[error("tuning failed: none of {starts} starts produced a finite objective")]
    TuningFailed { starts: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerical kind (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPsd { .. }
                | Error::RankDeficient { .. }
                | Error::Conditioning { .. }
                | Error::TuningFailed { .. }
                | Error::UndefinedFit
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
