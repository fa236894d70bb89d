use std::path::PathBuf;

/// Errors produced by every fallible operation in this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape { op: &'static str, expected: String, got: String },

    #[error("row {index} has zero norm")]
    ZeroRow { index: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("problem too large for exhaustive search: n = {n} (limit {limit})")]
    TooLarge { n: usize, limit: usize },

    #[error("sparse candidate pattern admits no perfect matching (row {row} cannot be assigned)")]
    Infeasible { row: usize },

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Malformed or corrupt files.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {0}")]
    BadVersion(u8),

    #[error("unknown dtype tag {0}")]
    BadDtype(u8),

    #[error("truncated: needed {needed} bytes, found {found}")]
    Truncated { needed: u64, found: u64 },

    #[error("trailing data: {0} unexpected bytes after payload")]
    Trailing(u64),

    #[error("layout mismatch: {0}")]
    Layout(String),

    #[error("line {line}: {message}")]
    Line { line: usize, message: String },

    #[error("line {line}: score {score} outside [0, 1]")]
    ScoreOutOfRange { line: usize, score: f64 },

    #[error("line {line}: duplicate latent index {latent}")]
    DuplicateLatent { line: usize, latent: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape { op, expected: expected.to_string(), got: got.to_string() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
