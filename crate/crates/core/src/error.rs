use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A physical or algorithmic parameter is out of its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// Missing or malformed configuration.
    #[error("config error: {0}")]
    Config(String),
    #[error("simulation diverged: {0}")]
    Diverged(String),
    #[error("model format error: {0}")]
    Format(String),
    #[error("model corrupted: crc mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Corruption { stored: u32, computed: u32 },
    #[error("memory budget exceeded: {required} bytes required, {budget} bytes available")]
    Budget { required: usize, budget: usize },
    /// Training produced a non-finite loss or reward.
    #[error("training diverged: {0}")]
    TrainingDiverged(String),
    #[error("flight failed: {0}")]
    FlightFailed(String),
    #[error("telemetry schema error: {0}")]
    Schema(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
