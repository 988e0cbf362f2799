use thiserror::Error;

use crate::engine::CapExceeded;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside the domain an operation accepts.
    #[error("parameter domain error: {0}")]
    Domain(String),

    /// The network is valid but is not the four-buffer KSRS topology.
    #[error("unsupported topology: {0}")]
    UnsupportedTopology(String),

    /// A simulation ran past its event cap before reaching its target.
    #[error(transparent)]
    CapExceeded(Box<CapExceeded>),

    /// A requested time lies outside a recorded trajectory.
    #[error("range error: {0}")]
    Range(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

impl From<CapExceeded> for Error {
    fn from(value: CapExceeded) -> Self {
        Error::CapExceeded(Box::new(value))
    }
}
