use thiserror::Error;

/// Errors produced by model construction and numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    ParamDomain(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("linear algebra failure: {0}")]
    LinAlg(String),

    #[error("numeric underflow: {0}")]
    Underflow(String),

    #[error("sampler initialization failed: {0}")]
    SamplerInit(String),

    #[error("sampler diagnostics: {0}")]
    SamplerDiagnostics(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
