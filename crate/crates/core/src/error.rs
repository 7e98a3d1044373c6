use std::path::PathBuf;

/// Errors raised anywhere in the simulation library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error at `{key}`{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config {
        key: String,
        line: Option<usize>,
        message: String,
    },

    #[error("pre-singular time t={t}: BKW coefficient P={p} is not positive")]
    PreSingularTime { t: f64, p: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("query far outside support: kernel sum underflowed at {0:?}")]
    FarOutsideSupport(Vec<f64>),

    #[error("singular covariance (particles concentrated on a hyperplane)")]
    SingularCovariance,

    #[error("non-finite score value at particle {index}")]
    NonFiniteScore { index: usize },

    #[error("non-finite position at particle {index} after step {step}")]
    NonFinitePosition { index: usize, step: usize },

    #[error("score initialization did not converge after {steps} steps (relative loss {loss:e})")]
    TrainingNonConvergence { steps: usize, loss: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            line: None,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
