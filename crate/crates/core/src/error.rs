use std::path::PathBuf;

use thiserror::Error;

use crate::pipeline::Stage;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read frame {index} ({path}): {reason}")]
    Ingestion {
        index: usize,
        path: PathBuf,
        reason: String,
    },

    #[error("structural mismatch: {0}")]
    Structural(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("match error: {0}")]
    Match(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("constraint conflict at frame {frame}, pixel ({x}, {y}): {reason}")]
    ConstraintConflict {
        frame: usize,
        x: usize,
        y: usize,
        reason: String,
    },

    #[error("appearance error: {0}")]
    Appearance(String),

    #[error("crop error: {0}")]
    Crop(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("project file has schema version {found}, this build reads up to {supported}; upgrade required")]
    Upgrade { found: u32, supported: u32 },

    #[error("parse error in {path} at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps an error with the pipeline stage that produced it. Already
    /// attributed errors keep their original stage.
    pub fn in_stage(self, stage: Stage) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// The innermost error, with stage attribution stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}
