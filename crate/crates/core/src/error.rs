use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("cost matrix is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("matrix is singular: {0}")]
    Singular(&'static str),
    #[error("row {0} is zero with a negative offset; the set is trivially empty")]
    TriviallyEmpty(usize),
    #[error("set is unbounded: {0}")]
    Unbounded(&'static str),
    #[error("{what} exceeds the limit of {limit}")]
    TooLarge { what: &'static str, limit: usize },
    #[error("point lies outside every piece of the decomposition")]
    OutsideWorkspace,
    #[error("every piece became empty; the admissible set is void")]
    EmptyUnion,
    #[error("tightening must satisfy 0 <= eps < (upper - lower)/2 on every channel")]
    InvalidTightening,
    #[error("big-M override {m} is below the required {required:.4} for cell {cell}")]
    BigMTooSmall { cell: usize, m: f64, required: f64 },
    #[error("iteration limit reached in {0}")]
    IterationLimit(&'static str),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("controller problem is infeasible")]
    Infeasible,
    #[error("{0} budget exhausted")]
    Budget(&'static str),
    #[error("{path}: {msg}")]
    Config { path: PathBuf, msg: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
