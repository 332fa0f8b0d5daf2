use std::io;
use std::path::{Path, PathBuf};

use diffroad_core::OpenDriveError;

use crate::checkpoint::CheckpointError;
use crate::ingest::IngestError;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Core(#[from] diffroad_core::Error),
    #[error(transparent)]
    OpenDrive(#[from] OpenDriveError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{}:{line}: {message}", path.display())]
    Record { path: PathBuf, line: usize, message: String },
    #[error("{}: content hash changed since it was recorded", path.display())]
    Tampered { path: PathBuf },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<AppError>,
    },
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_STAGE: i32 = 3;

impl AppError {
    pub fn io(path: impl AsRef<Path>) -> impl FnOnce(io::Error) -> AppError {
        let path = path.as_ref().to_path_buf();
        move |source| AppError::Io { path, source }
    }

    /// 2 for configuration problems found before any stage ran, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => EXIT_CONFIG,
            AppError::Core(diffroad_core::Error::Config(_)) => EXIT_CONFIG,
            _ => EXIT_STAGE,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> AppError {
        match self {
            e @ AppError::Stage { .. } => e,
            e => AppError::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}
