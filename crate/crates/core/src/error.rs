use std::path::PathBuf;

/// Errors produced by the grading pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Malformed {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("answer {answer_id} references unknown question {question_id}")]
    DanglingQuestion {
        answer_id: String,
        question_id: String,
    },

    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: String },

    #[error("{what} {value} outside [0, 5]")]
    GradeRange { what: String, value: f64 },

    #[error("question {0} has an empty model answer")]
    EmptyModelAnswer(String),

    #[error("question {0}: model answer is empty after preprocessing")]
    EmptyModelVocabulary(String),

    #[error("raw layout: {0}")]
    RawLayout(String),

    #[error("run {0} not found")]
    RunNotFound(String),

    #[error("run {run_id}: checksum mismatch for {file}")]
    Corrupted { run_id: String, file: String },

    #[error("run {run_id}: stage output {file} already written with different content")]
    ImmutableStage { run_id: String, file: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("every term was removed by the document-frequency filter ({docs} documents, min_df {min_df})")]
    EmptyVocabulary { docs: usize, min_df: f64 },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid k-means configuration: {0}")]
    InvalidConfig(String),

    #[error("elbow selection needs at least 3 values of k, got {0}")]
    ElbowRange(usize),

    #[error("answer {0} has no grades")]
    MissingGrades(String),

    #[error("mark model parameter beta2 must be positive, got {0}")]
    InvalidExponent(f64),

    #[error("mark model is underdetermined: {distinct} distinct distance value(s), need at least 3")]
    Underdetermined { distinct: usize },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
