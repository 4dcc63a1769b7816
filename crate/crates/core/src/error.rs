use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Vehicle or world parameters outside their admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Gains whose closed-loop poles are not strictly inside the unit circle.
    #[error("unstable gains: pole magnitudes {magnitudes:?}")]
    UnstableGains { magnitudes: Vec<f64> },

    #[error("inverse-model slot: {0}")]
    Slot(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Cholesky factorization failed even after the maximum jitter.
    #[error("kernel matrix is not positive definite after jitter {jitter:e}")]
    Conditioning { jitter: f64 },

    #[error("optimization failed: {0}")]
    Optimization(String),

    /// Training input the GP cannot be fitted to.
    #[error("training: {0}")]
    Training(String),

    #[error("configuration: {0}")]
    Config(String),

    /// A stored artifact (model, dataset) does not match what the caller expects.
    #[error("artifact mismatch: {0}")]
    Artifact(String),

    #[error("simulation diverged at step {step}: {what}")]
    Diverged { step: usize, what: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 numeric/training,
    /// 4 artifact mismatch, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) | Error::UnstableGains { .. } => 2,
            Error::Conditioning { .. }
            | Error::Optimization(_)
            | Error::Training(_)
            | Error::NonFinite(_)
            | Error::Diverged { .. } => 3,
            Error::Artifact(_) | Error::Slot(_) => 4,
            _ => 1,
        }
    }
}
