use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlagError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not symmetric (max |a_ij - a_ji| = {max_diff:e}, tolerance {tol:e})")]
    NotSymmetric { max_diff: f64, tol: f64 },

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eig:e})")]
    NotPsd { min_eig: f64 },

    #[error("index {index} out of range for {len} items")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-binary entry {value} at position {position}")]
    NonBinary { value: String, position: String },

    #[error("{items} items exceeds the enumeration cap of {cap}")]
    TooLarge { items: usize, cap: usize },

    #[error("dataset has no observations")]
    EmptyDataset,

    #[error("accept/reject envelope violated: log ratio {log_ratio} exceeds bound {log_bound} at theta = {theta:?}")]
    EnvelopeViolation {
        log_ratio: f64,
        log_bound: f64,
        theta: Vec<f64>,
    },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FlagError>;
