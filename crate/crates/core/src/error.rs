use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },

    #[error("unknown header {0:?}; expected `traj_id,frame,x,y` or `traj_id,t,x,y`")]
    UnknownHeader(String),

    #[error("header mixes frame and time columns: {0:?}")]
    MixedTimeColumns(String),

    #[error("missing `#resolution=WxH` line before the header")]
    MissingResolution,

    #[error("trajectory {id} has two points at time {t}")]
    DuplicateTimestamp { id: u64, t: f64 },

    #[error("invalid JSON document: {0}")]
    Json(#[from] serde_json::Error),

    #[error("unknown gate {0:?}")]
    UnknownGate(String),

    #[error("duplicate gate name {0:?}")]
    DuplicateGate(String),

    #[error("polygon {0:?} is not closed (first and last vertex differ)")]
    OpenPolygon(String),

    #[error("polygon {0:?} is self-intersecting")]
    SelfIntersectingPolygon(String),

    #[error("unknown cluster label {0}")]
    UnknownLabel(i64),

    #[error("invalid directives: {0}")]
    InvalidDirectives(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error("resampled paths have mismatched sample counts ({expected} vs {found})")]
    MismatchedSampleCount { expected: usize, found: usize },

    #[error("target cluster count {target} exceeds the {available} available items")]
    TargetCountTooLarge { target: usize, available: usize },

    #[error("empty member set")]
    EmptyMembers,

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Whether the error was caused by the inputs (files, configuration) rather
    /// than by a failure inside the pipeline itself.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_input_error(),
            Error::DegenerateGeometry(_)
            | Error::EmptySequence
            | Error::MismatchedSampleCount { .. }
            | Error::EmptyMembers => false,
            _ => true,
        }
    }

    /// Process exit status for this error: 1 for input or validation
    /// problems, 2 for internal pipeline failures.
    pub fn exit_code(&self) -> i32 {
        if self.is_input_error() {
            1
        } else {
            2
        }
    }
}
