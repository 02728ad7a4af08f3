use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(
        "solver did not converge after {iterations} iterations (residual {:.3e})",
        .trajectory.last().copied().unwrap_or(f64::NAN)
    )]
    NonConvergence {
        iterations: usize,
        /// Residual recorded at each checkpoint of the solve.
        trajectory: Vec<f64>,
    },

    #[error("index {index} out of range for layer of size {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("{path}: row {row}: {message}")]
    Schema {
        path: String,
        row: usize,
        message: String,
    },

    #[error("missing artifact {path}; run the `{stage}` stage first")]
    MissingArtifact { path: String, stage: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
