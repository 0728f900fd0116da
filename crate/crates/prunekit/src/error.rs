use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] prunekit_core::Error),
    #[error("BadMagic: {0:?} is not a PFC1 checkpoint")]
    BadMagic(PathBuf),
    #[error("BadManifest: {0}")]
    BadManifest(String),
    #[error("ShapeMismatch: tensor {tensor} declares {declared} bytes at offset {offset}, payload has {payload}")]
    ShapeMismatch { tensor: String, offset: u64, declared: u64, payload: u64 },
    #[error("IoFailure: {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("BadFormat: {path:?} line {line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
    #[error("Usage: {0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(e) => e.kind(),
            Error::BadMagic(_) => "BadMagic",
            Error::BadManifest(_) => "BadManifest",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::Io { .. } => "IoFailure",
            Error::Format { .. } => "BadFormat",
            Error::Usage(_) => "Usage",
        }
    }

    /// 1 usage, 2 I/O or file format, 3 validation or precondition.
    pub fn exit_code(&self) -> i32 {
        use prunekit_core::Error as C;
        match self {
            Error::Usage(_) => 1,
            Error::Core(C::ExecutorUnavailable(_) | C::InvalidTokenizer(_)) => 2,
            Error::Core(_) => 3,
            _ => 2,
        }
    }
}
