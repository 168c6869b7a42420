use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("graph is disconnected (spectral gap {delta})")]
    Disconnected { delta: f64 },

    #[error("mixing matrix invariant violated: {0}")]
    InvariantViolation(String),

    #[error("invalid compression parameter: {0}")]
    CompressionParameter(String),

    #[error("operator is not a compression: {0}")]
    NotACompression(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("numeric divergence at t={t} on node {node}")]
    Divergence { t: usize, node: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("schedule precondition violated: {0}")]
    Precondition(String),

    #[error("replica divergence at t={t}: node {holder}'s copy of node {owner} differs")]
    ReplicaDivergence { t: usize, holder: usize, owner: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
