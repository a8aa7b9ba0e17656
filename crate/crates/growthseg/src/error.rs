use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("cannot open {path}: {source}")]
    Open { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: year {year} appears twice")]
    DuplicateYear { line: u64, year: i32 },
    #[error("line {line}: year {year} follows {previous}; years must be consecutive")]
    GapInYears { line: u64, year: i32, previous: i32 },
    #[error("line {line}: year {year} is out of order after {previous}")]
    OutOfOrder { line: u64, year: i32, previous: i32 },
    #[error("line {line}: missing value inside the series")]
    InteriorMissing { line: u64 },
    #[error("input has no data rows")]
    EmptyInput,
    #[error(transparent)]
    Core(#[from] growthseg_core::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, IoError>;
