use thiserror::Error;

pub type Result<T, E = FivesError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FivesError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("label error at line {line}: expected 0 or 1, found {value:?}")]
    Label { line: usize, value: String },

    #[error("parse error at line {line}, column {column:?}: cannot read {value:?} as a number")]
    Parse {
        line: usize,
        column: String,
        value: String,
    },

    #[error("table has no data rows")]
    EmptyTable,

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("dimension mismatch: {left:?} vs {right:?} ({context})")]
    Dimension {
        left: Vec<usize>,
        right: Vec<usize>,
        context: &'static str,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("cap exceeded: {0}")]
    Cap(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("artifact format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
