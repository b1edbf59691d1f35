use thiserror::Error;

pub type Result<T> = std::result::Result<T, SaftError>;

#[derive(Debug, Error)]
pub enum SaftError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv parse error at row {row}, column {column}: {message}")]
    CsvParse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid table: {0}")]
    InvalidTable(String),

    #[error("column name mismatch: {0}")]
    ColumnMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid sequence at position {position}: {kind}")]
    InvalidSequence { position: usize, kind: String },

    #[error("sequence parse error at token {position}: {message}")]
    SequenceParse { position: usize, message: String },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("stage `{stage}` requires artifact from `{required}`; run that command first")]
    MissingArtifact { stage: String, required: String },

    #[error("stage `{stage}` failed: {message}")]
    StageFailed { stage: String, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SaftError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        SaftError::Io {
            path: path.into(),
            source,
        }
    }
}
