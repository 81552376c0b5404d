use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecordsError {
    #[error("input header is missing required column `{0}`")]
    MissingColumn(String),
    #[error("no records for task `{0}`")]
    EmptyDataset(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyData,
    #[error("feature vector has {got} values, model schema expects {expected}")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("feature `{feature}` has invalid value {value}")]
    InvalidFeature { feature: String, value: f64 },
    #[error("unsupported model format version {0}")]
    FormatVersion(u32),
    #[error("model checksum mismatch (stored {stored}, computed {computed})")]
    Checksum { stored: String, computed: String },
    #[error("model encoding: {0}")]
    Encoding(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum HqrError {
    #[error("no model for task `{0}`")]
    MissingModel(String),
    #[error("no queue for task `{0}`")]
    MissingQueue(String),
    #[error("request lists no tasks")]
    EmptyRequest,
    #[error("task `{0}` listed more than once")]
    DuplicateTask(String),
    #[error("dependency {before} -> {after} references a task not in the request")]
    UnknownDependency { before: String, after: String },
    #[error("cyclic dependencies: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("invalid simulation: {0}")]
    InvalidSimulation(String),
    #[error("queue `{0}` has no service windows")]
    NoWindows(String),
    #[error(transparent)]
    Forest(#[from] ForestError),
}
