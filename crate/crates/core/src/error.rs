use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// The weak-excitation model was driven outside its domain.
    #[error("model validity violated: excitation |sigma|^2 = {excitation:.4e} exceeds {limit}")]
    ModelValidity { excitation: f64, limit: f64 },

    #[error("singular steady-state system: {0}")]
    SingularSystem(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("peak fit failed: {0}")]
    FitFailure(String),

    #[error("insufficient samples: {got} < {needed}")]
    InsufficientSamples { got: u64, needed: u64 },

    #[error("config line {line}: `{key}`: {message}")]
    Config { line: usize, key: String, message: String },

    #[error("too many failed trajectories: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}
