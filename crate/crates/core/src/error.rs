use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("variable index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(
        "dense derivative Gram needs {required_bytes} bytes, above the configured cap of {cap_bytes} bytes"
    )]
    MemoryBudget { required_bytes: usize, cap_bytes: usize },

    #[error(
        "smoothness weight nu = 0 makes the objective non-strictly convex; pass allow_nonstrict to run anyway"
    )]
    NonStrict,

    #[error(
        "inner prox not certified at outer step {outer}: gap {gap:e} > tolerance {tol:e} after {inner} iterations"
    )]
    InnerNotCertified {
        outer: usize,
        inner: usize,
        gap: f64,
        tol: f64,
    },

    #[error("linear solve failed: {0}")]
    Factorization(String),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
