use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("tetrahedron {tet} is inverted or degenerate (signed volume {volume:e})")]
    InvertedElement { tet: usize, volume: f64 },

    #[error("model file format error: {0}")]
    Format(String),

    #[error("unsupported model file version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("model file truncated while reading {0}")]
    Truncated(String),

    #[error("model invariant violated: {0}")]
    InvariantViolation(String),

    #[error("energy term `{term}` produced a non-finite value")]
    NonFinite { term: String },

    #[error("strain energy saturation overflow in element {element}")]
    SaturationOverflow { element: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("state stack is empty")]
    EmptyStateStack,

    #[error("index {index} out of range for dimension {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("rotation at the log-map branch point (angle = pi) for {0}")]
    LogBranch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            actual,
        });
    }
    Ok(())
}
