use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("ingestion error: {0}")]
    Ingestion(String),
    #[error("partition plan error: {0}")]
    Plan(String),
    #[error("aggregation error: {0}")]
    Aggregation(String),
    #[error("membership error: {0}")]
    Membership(String),
    #[error("workflow error: {0}")]
    Workflow(String),
    #[error("conformance violation: {0}")]
    Violation(String),
    #[error("access error: {0}")]
    Access(String),
    #[error("authenticity error: {0}")]
    Authenticity(String),
    #[error("registration error: {0}")]
    Registration(String),
    #[error("seal error: {0}")]
    Seal(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
