use thiserror::Error;

/// Errors produced by simulation, estimation and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("integration diverged on path (i={i}, j={j}) at step {step}")]
    IntegrationDiverged { i: usize, j: usize, step: usize },

    #[error("rank-deficient least-squares problem: {0}")]
    RankDeficient(String),

    #[error("ill-conditioned system (condition number {condition:.3e}): {context}")]
    IllConditioned { condition: f64, context: String },

    #[error("matrix logarithm undefined: eigenvalue {re:.6e}{im:+.6e}i {reason}")]
    LogBranch { re: f64, im: f64, reason: String },

    #[error("no valid snapshot pairs for lag {lag_steps}")]
    EmptyData { lag_steps: usize },

    #[error("dictionary does not support this operation: {0}")]
    Dictionary(String),

    #[error(
        "generator closure fails for observable {observable}: action leaves the dictionary span"
    )]
    ClosureFailure { observable: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    /// Errors that stem from the input configuration rather than the numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Parse { .. }
                | Error::Io { .. }
                | Error::DimensionMismatch { .. }
                | Error::Dictionary(_)
        )
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
