use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid device profile: {0}")]
    InvalidProfile(String),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("column count error: expected {expected} feature columns, found {found}")]
    ColumnCount { expected: usize, found: usize },

    #[error("unparseable row {row}: {reason}")]
    Parse { row: usize, reason: String },

    #[error("unknown label {label:?} at row {row}")]
    UnknownLabel { row: usize, label: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("{stage} failed for {sample}: {source}")]
    Stage {
        stage: &'static str,
        sample: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn stage(stage: &'static str, sample: impl Into<String>, source: Error) -> Self {
        Error::Stage { stage, sample: sample.into(), source: Box::new(source) }
    }

    /// Short machine-readable discriminant used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "parameter",
            Error::InvalidProfile(_) => "invalid-profile",
            Error::DegenerateSignal(_) => "degenerate-signal",
            Error::Shape(_) => "shape",
            Error::Label(_) => "label",
            Error::Stratification(_) => "stratification",
            Error::TrainingDiverged(_) => "training-diverged",
            Error::ColumnCount { .. } => "column-count",
            Error::Parse { .. } => "parse",
            Error::UnknownLabel { .. } => "unknown-label",
            Error::Format(_) => "format",
            Error::Stage { source, .. } => source.kind(),
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
