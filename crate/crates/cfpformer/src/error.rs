use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not line up for the requested operation.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// Invalid model or run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// API misuse (non-scalar loss, missing gradients, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// NaN/Inf produced where finite values were required.
    #[error("numeric failure in {op}: {detail}")]
    Numeric { op: &'static str, detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed CFPT/CFPC/PGM/manifest payloads.
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
