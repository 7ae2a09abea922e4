use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong between loading a shape and deforming it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),
    #[error("index {index} out of range for {len} vertices")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("tet {tet} is degenerate (volume {volume:e})")]
    DegenerateTet { tet: usize, volume: f64 },
    #[error("tet {tet} duplicates tet {other}")]
    DuplicateTet { tet: usize, other: usize },
    #[error("unsupported shape kind '{0}'")]
    UnsupportedKind(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("mass entry {index} is not positive ({value:e})")]
    NonPositiveMass { index: usize, value: f64 },
    #[error("invalid handles: {0}")]
    InvalidHandles(String),
    #[error("vertex {vertex} has no path to any handle")]
    Disconnected { vertex: usize },
    #[error("active set solver hit the iteration cap ({iterations}) on handle {handle}")]
    MaxIterations { handle: usize, iterations: usize },
    #[error("reduced system is not positive definite (handle {handle})")]
    NotPsd { handle: usize },
    #[error("requested {requested} handles but the cloud has {available} points")]
    TooManyHandles { requested: usize, available: usize },
    #[error("point cloud is degenerate: {0}")]
    DegenerateCloud(String),
    #[error("feature/parameter shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("prediction and ground truth patterns disagree: {0}")]
    PatternMismatch(String),
    #[error("training loss diverged at epoch {epoch}")]
    DivergedLoss {
        epoch: usize,
        checkpoint: Box<crate::lapnet::LapNetParams>,
    },
    #[error("bad magic in model file")]
    BadMagic,
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("file is truncated")]
    TruncatedFile,
    #[error("cloud has {cloud} points but mesh has {mesh} vertices")]
    IndexMisalignment { cloud: usize, mesh: usize },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            line,
            reason: reason.into(),
        }
    }

    /// Short machine-readable name, used in CLI/service error bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "Io",
            Error::Parse { .. } => "ParseError",
            Error::EmptyCloud => "EmptyCloud",
            Error::NonFinite(_) => "NonFinite",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::DegenerateTet { .. } => "DegenerateTet",
            Error::DuplicateTet { .. } => "DuplicateTet",
            Error::UnsupportedKind(_) => "UnsupportedKind",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NonPositiveMass { .. } => "NonPositiveMass",
            Error::InvalidHandles(_) => "InvalidHandles",
            Error::Disconnected { .. } => "Disconnected",
            Error::MaxIterations { .. } => "MaxIterations",
            Error::NotPsd { .. } => "NotPSD",
            Error::TooManyHandles { .. } => "TooManyHandles",
            Error::DegenerateCloud(_) => "DegenerateCloud",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::PatternMismatch(_) => "PatternMismatch",
            Error::DivergedLoss { .. } => "DivergedLoss",
            Error::BadMagic => "BadMagic",
            Error::VersionMismatch { .. } => "VersionMismatch",
            Error::TruncatedFile => "TruncatedFile",
            Error::IndexMisalignment { .. } => "IndexMisalignment",
            Error::Json(_) => "JsonError",
        }
    }

    /// True for failures of the numerics rather than of the input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::MaxIterations { .. }
                | Error::NotPsd { .. }
                | Error::Disconnected { .. }
                | Error::DivergedLoss { .. }
        )
    }
}
