use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported model: {0}")]
    Unsupported(String),

    /// An iterative method stopped without meeting its tolerance. `best` is
    /// the best iterate seen (a scalar summary, e.g. the optimizing velocity).
    #[error("numerical failure: {msg} (best iterate {best})")]
    Numerical { msg: String, best: f64 },

    #[error("transport error at t={t}: particle {particle} left the grid box ({detail})")]
    Transport {
        t: f64,
        particle: usize,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
