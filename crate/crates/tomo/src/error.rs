use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TomoError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] tomo_core::Error),
    #[error("serialization failed: {0}")]
    Serialize(String),
}

pub type Result<T> = std::result::Result<T, TomoError>;

impl TomoError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// Process exit status: 2 configuration, 3 under-determined ensemble,
    /// 4 numerical failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use tomo_core::Error as E;
        match self {
            Self::Config(_) | Self::Parse { .. } => 2,
            Self::Core(E::Config(_)) => 2,
            Self::Core(E::UnderDetermined { .. }) => 3,
            Self::Core(_) => 4,
            Self::Io { .. } | Self::Serialize(_) => 1,
        }
    }
}

impl From<serde_json::Error> for TomoError {
    fn from(e: serde_json::Error) -> Self {
        Self::Serialize(e.to_string())
    }
}

impl From<csv::Error> for TomoError {
    fn from(e: csv::Error) -> Self {
        Self::Serialize(e.to_string())
    }
}
