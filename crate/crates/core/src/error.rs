use std::path::PathBuf;

/// Errors raised anywhere in the registration pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke an operation's contract (shapes, ranges, scalar-ness).
    #[error("contract violation in {op}: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error("(I - dg/du) is singular: smallest singular value {sigma_min:e}")]
    Singular { sigma_min: f64 },

    #[error("label {0} is missing from one of the masks")]
    LabelMissing(u8),

    #[error("could not produce a fold-free field after {rounds} bisection rounds")]
    FoldFree { rounds: usize },

    #[error(transparent)]
    Dten(#[from] DtenError),

    #[error("{path}:{line}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
}

/// Failure modes of the DTEN container.
#[derive(Debug, thiserror::Error)]
pub enum DtenError {
    #[error("bad magic {0:?}, expected \"DTEN\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown dtype code {0}")]
    BadDtype(u8),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("dtype mismatch: file holds {found}, caller asked for {expected}")]
    DtypeMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("refusing to write non-finite tensor")]
    NonFinite,
    #[error("{extra} unexpected bytes after the payload")]
    Trailing { extra: usize },
}

impl DtenError {
    /// Stable numeric code per failure kind, used for process exit statuses.
    pub fn code(&self) -> u8 {
        match self {
            DtenError::BadMagic(_) => 1,
            DtenError::BadVersion(_) => 2,
            DtenError::BadDtype(_) => 3,
            DtenError::Truncated { .. } => 4,
            DtenError::DtypeMismatch { .. } => 5,
            DtenError::NonFinite => 6,
            DtenError::Trailing { .. } => 7,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Contract {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
