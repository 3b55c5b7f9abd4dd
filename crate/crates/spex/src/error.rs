use thiserror::Error;

/// Errors surfaced by the spex library.
#[derive(Error, Debug)]
pub enum SpexError {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Marginal coefficient configuration with no supported evaluation path.
    #[error("unsupported marginal configuration: {0}")]
    UnsupportedConfiguration(String),

    /// Covariance matrix could not be assembled or factorized.
    #[error("covariance assembly failed: {0}")]
    Assembly(String),

    /// A root bracket could not be established or refined.
    #[error("root finding failed: {0}")]
    RootFinding(String),

    /// Dataset violates a structural invariant.
    #[error("invalid data: {0}")]
    Data(String),

    /// CSV ingestion rejected the input; message names rows/files.
    #[error("ingestion error: {0}")]
    Ingest(String),

    /// Run configuration is inconsistent or incomplete.
    #[error("configuration error: {0}")]
    Config(String),

    /// Sampler could not start or store output.
    #[error("sampler error: {0}")]
    Sampler(String),

    /// A configured size cap was exceeded.
    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SpexError>;
