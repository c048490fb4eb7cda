use std::path::PathBuf;

/// Errors produced by the preference-learning toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input violated a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),
    /// Components were configured inconsistently (dimension mismatch, missing provider, ...).
    #[error("configuration error: {0}")]
    Config(String),
    /// A numeric input was NaN or infinite.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A line of a line-oriented input file could not be parsed or validated.
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    /// A file-backed embedding table has no entry for the requested key.
    #[error("no embedding for prompt {prompt:?} / output {output:?}")]
    MissingEmbedding { prompt: String, output: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn ensure_finite(value: f64, what: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} is not finite ({value})")))
    }
}
