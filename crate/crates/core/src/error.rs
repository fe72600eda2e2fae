use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or arguments (CLI exit code 2).
    #[error("config error: {0}")]
    Config(String),
    /// Input violates a documented precondition.
    #[error("invalid input: {0}")]
    Invalid(String),
    /// Malformed file contents.
    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },
    /// Divergence or non-finite values (CLI exit code 3).
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// `t` outside the domain where the requested quantity is defined.
    #[error("time {t} outside domain: {msg}")]
    Domain { t: f64, msg: &'static str },
    #[error("enumerated support exceeds {limit} sequences")]
    SupportOverflow { limit: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Process exit code for this error: 2 config, 3 numeric, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            Error::Io { .. } => 4,
            _ => 2,
        }
    }
}
