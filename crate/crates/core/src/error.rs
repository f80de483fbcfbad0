use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed input, bad parameters, I/O problems.
    Input,
    /// The data do not satisfy a model precondition (balance, replication).
    Model,
    /// A numerical routine could not produce a result.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("curves are defined on different grids")]
    GridMismatch,

    #[error("no mean curve supplied for measure {measure}")]
    MissingMean { measure: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not symmetric (max |S - S^T| = {max_diff:e})")]
    Asymmetric { max_diff: f64 },

    #[error("degenerate spectrum: all eigenvalues are zero")]
    DegenerateSpectrum,

    #[error("unbalanced design: {0}")]
    Unbalanced(String),

    #[error("measure group {0} has no curves")]
    EmptyGroup(String),

    #[error("insufficient replication: {0}")]
    InsufficientReplication(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular score system for subject {subject}")]
    Singular { subject: String },

    #[error("undefined ICC: {0}")]
    UndefinedIcc(String),

    #[error("score matrices have {a} and {b} components")]
    ComponentMismatch { a: usize, b: usize },

    #[error("p-value at position {index} is outside [0, 1]: {value}")]
    InvalidPValue { index: usize, value: f64 },

    #[error("undefined correlation for component {component}: zero variance")]
    UndefinedCorrelation { component: String },

    #[error("basis is not orthonormal: {0}")]
    InvalidBasis(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("incomplete curve {0}")]
    IncompleteCurve(String),

    #[error("line {line}: duplicate record {key}")]
    Duplicate { line: u64, key: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Unbalanced(_)
            | Error::EmptyGroup(_)
            | Error::InsufficientReplication(_)
            | Error::InsufficientData(_) => ErrorKind::Model,
            Error::Asymmetric { .. }
            | Error::DegenerateSpectrum
            | Error::Singular { .. }
            | Error::UndefinedIcc(_)
            | Error::UndefinedCorrelation { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Input,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
