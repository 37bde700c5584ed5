use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] moekd_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            return Self::MissingArtifact(path);
        }
        Self::Io { path, source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Self::Json {
            path: path.into(),
            source,
        }
    }

    /// 2 for configuration problems, 3 for missing artifacts, 4 for
    /// numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use moekd_core::Error as C;
        match self {
            Self::Json { .. } | Self::Config(_) | Self::Checkpoint(_) => 2,
            Self::MissingArtifact(_) => 3,
            Self::Io { .. } => 1,
            Self::Core(e) => match e {
                C::TeacherUnavailable => 3,
                C::NumericError(_) | C::TeacherTrainingFailed { .. } => 4,
                C::InvalidConfig(_)
                | C::InvalidMix(_)
                | C::InvalidK { .. }
                | C::InvalidBeta(_)
                | C::InvalidSchedule(_)
                | C::StageOrderError(_)
                | C::AlreadySparse
                | C::UnknownSymbol(_)
                | C::InvalidImage(_) => 2,
                _ => 1,
            },
        }
    }
}
