use std::fmt;

use crate::metrics::MeasureKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A single rejected row from CSV ingestion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    /// 1-based line number in the source file (the header is line 1).
    pub line: usize,
    pub column: String,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column `{}`: {}", self.line, self.column, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input shape error: {0}")]
    InputShape(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("measure {kind} is undefined for group {group}")]
    UndefinedMeasure { kind: MeasureKind, group: i64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("{} row(s) could not be parsed; first: {}", .0.len(), .0[0])]
    Rows(Vec<RowError>),

    #[error("model format error: {0}")]
    Format(String),

    #[error("state error: {0}")]
    State(String),

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
