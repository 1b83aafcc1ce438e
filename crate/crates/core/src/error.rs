use std::fmt;

/// Error type shared by every module in the crate.
#[derive(Debug)]
pub enum Error {
    /// Incompatible matrix shapes for an operation. Carries both shapes.
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    /// Invalid configuration (bad dimensions, missing/extra parameters, bad keys).
    Config(String),
    /// Invalid data fed into a model (token ids out of range, width mismatches).
    Data(String),
    /// Batch-norm inference requested before any running-statistics update.
    UninitializedStats(&'static str),
    /// A numeric evaluation produced NaN or Inf.
    NonFinite(String),
    /// Checkpoint or dataset document could not be parsed.
    Malformed(String),
    /// Checkpoint format version does not match what this build reads.
    VersionMismatch { found: u64, expected: u64 },
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, left, right } => write!(
                f,
                "shape mismatch in {op}: {}x{} vs {}x{}",
                left.0, left.1, right.0, right.1
            ),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::UninitializedStats(site) => write!(
                f,
                "uninitialized statistics: batch-norm site {site} used in inference mode before any training update"
            ),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::Malformed(msg) => write!(f, "malformed document: {msg}"),
            Error::VersionMismatch { found, expected } => write!(
                f,
                "checkpoint version mismatch: file has format_version {found}, this build reads {expected}"
            ),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
