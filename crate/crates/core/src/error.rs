use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A sample whose norm is zero cannot be rescaled.
    #[error("degenerate input: sample {sample} has zero norm")]
    Degenerate { sample: usize },

    #[error("diverged: non-finite value in parameter block `{block}`{}", location.as_ref().map(|l| format!(" at {l}")).unwrap_or_default())]
    Diverged {
        block: String,
        location: Option<String>,
    },

    #[error("numerical invariant violated: {0}")]
    Numeric(String),

    #[error("{path}: {kind} at byte offset {offset}")]
    Parse {
        path: PathBuf,
        kind: ParseErrorKind,
        offset: u64,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    BadMagic { expected: u32, found: u32 },
    Truncated,
    CountMismatch { images: u32, labels: u32 },
    BadLabel(u8),
}

impl std::fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseErrorKind::BadMagic { expected, found } => {
                write!(f, "bad magic 0x{found:08x} (expected 0x{expected:08x})")
            }
            ParseErrorKind::Truncated => write!(f, "truncated file"),
            ParseErrorKind::CountMismatch { images, labels } => {
                write!(f, "image count {images} does not match label count {labels}")
            }
            ParseErrorKind::BadLabel(l) => write!(f, "label {l} out of range 0..9"),
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
