use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: xml parse error: {msg}")]
    XmlParse { path: PathBuf, line: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("{path}: line {line}: {msg}")]
    Jsonl { path: PathBuf, line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("tokenize error: {0}")]
    Tokenize(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("adapter unavailable: {0}")]
    AdapterUnavailable(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite gradient in tensor '{0}'")]
    NonFiniteGradient(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
