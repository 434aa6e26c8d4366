use std::io;

/// Errors raised while decoding one of the on-disk formats.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported MRC mode {0} (only mode 2, 32-bit float, is supported)")]
    UnsupportedMode(i32),
    #[error("truncated file: needed {needed} bytes, found {found}")]
    Truncated { needed: u64, found: u64 },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("rotation in row {row} is not orthonormal (deviation {deviation:.3e})")]
    NonOrthonormal { row: usize, deviation: f64 },
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("capacity exceeded: {requested} bytes requested, budget is {budget} bytes")]
    Capacity { requested: u64, budget: u64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
