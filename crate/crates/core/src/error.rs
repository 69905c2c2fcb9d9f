use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("time {t} is outside [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },

    #[error("integration produced a non-finite value at grid index {index}")]
    Diverged { index: usize },

    #[error("riccati solution blew up at grid index {index}")]
    RiccatiDiverged { index: usize },

    #[error(
        "fixed-point iteration stopped after {} iterations with residual {:e}",
        .residuals.len(),
        .residuals.last().copied().unwrap_or(f64::NAN)
    )]
    NonConvergence { residuals: Vec<f64> },

    #[error("bisection did not reach tolerance; last brackets {brackets:?}")]
    Bisection { brackets: Vec<(f64, f64)> },

    #[error(
        "{count} assignments exceed the enumeration cap of {cap}; \
         use the mean-field solver for populations of this size"
    )]
    TooLarge { count: u128, cap: usize },

    #[error(
        "agent {agent}: (A, B) is not controllable, so reaching an arbitrary \
         neighbourhood of the destinations is not guaranteed"
    )]
    Uncontrollable { agent: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation { .. } | Error::Dimension(_) | Error::Json(_) => 2,
            Error::NonConvergence { .. } | Error::Bisection { .. } => 3,
            Error::TooLarge { .. } => 4,
            _ => 1,
        }
    }
}
