use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("I/O error: {0}")]
    Stream(#[from] std::io::Error),

    /// Binary matrix payload is malformed; `offset` is the byte position.
    #[error("malformed matrix file at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    /// Text input (CSV, mask, config) is malformed; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("similarity curve has fewer than two points (n = {0})")]
    CurveTooShort(usize),

    /// d1 == dn: the split objective is 0/0 everywhere.
    #[error("degenerate similarity curve: all {0} values are equal")]
    DegenerateCurve(usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
