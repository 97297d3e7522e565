use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid distribution parameters: {0}")]
    InvalidParams(String),

    #[error("csv ingest: {0}")]
    Ingest(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("hierarchy synthesis: need at least {needed} households, got {got}")]
    TooFewHouseholds { needed: usize, got: usize },

    #[error("singular working weights while updating parameter '{param}'")]
    SingularUpdate { param: String },

    #[error("model fit failed: {0}")]
    FitFailed(String),

    #[error("missing covariate '{0}' in feature frame")]
    MissingCovariate(String),

    #[error("forecast coverage mismatch: {0}")]
    CoverageMismatch(String),

    #[error("quantile bracket failure: {0}")]
    BracketFailure(String),

    #[error("unknown cell key: {0}")]
    UnknownCell(String),

    #[error("config: {0}")]
    Config(String),

    #[error("artifact: {0}")]
    Artifact(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
