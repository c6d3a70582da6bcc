use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library. Messages are stable; the CLI surfaces them
/// verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("normals required")]
    NormalsRequired,

    #[error("bootstrap requires labels")]
    LabelsRequired,

    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("no overlap between source and target")]
    NoOverlap,

    #[error("unknown instance {0}")]
    UnknownInstance(u32),

    #[error("timestep mismatch: expected {expected}, got {got}")]
    TimestepMismatch { expected: usize, got: usize },

    #[error("duplicate instance {0} in arrangement")]
    DuplicateInstance(u32),

    #[error("no ground plane")]
    NoGroundPlane,

    #[error("empty hierarchy level")]
    EmptyLevel,

    #[error("degenerate object {0}")]
    DegenerateObject(u32),

    #[error("mismatched point counts: {0} vs {1}")]
    MismatchedCounts(usize, usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid script at timestep {timestep}: {message}")]
    InvalidScript { timestep: usize, message: String },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

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

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by unreadable or malformed inputs rather than
    /// by the pipeline itself.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Io { .. } | Error::Parse { .. } => true,
            Error::Stage { source, .. } => source.is_input_error(),
            _ => false,
        }
    }

    pub(crate) fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| Error::Stage {
            stage,
            source: Box::new(e),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
