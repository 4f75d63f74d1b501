use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimsMismatch { expected: String, found: String },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated data: expected {expected} payload bytes, found {found}")]
    TruncatedData { expected: usize, found: usize },

    #[error("trailing data: {extra} bytes after the payload")]
    TrailingData { extra: usize },

    #[error("unsupported dtype: {0}")]
    UnsupportedDtype(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("dense system too large: {count} unknowns exceeds the cap of {cap}")]
    TooLarge { count: usize, cap: usize },

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("no non-ignored voxels")]
    EmptyDomain,

    #[error("empty mask")]
    EmptyMask,

    #[error("invalid segmentation: {0}")]
    InvalidSegmentation(String),

    #[error("no inscribed sphere contains landmark {0:?}")]
    LandmarkOutsideMask([usize; 3]),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("tape mismatch: {0}")]
    TapeMismatch(String),

    #[error("phantom geometry does not fit: {0}")]
    GeometryDoesNotFit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dims(expected: &crate::volume::GridDims, found: &crate::volume::GridDims) -> Self {
        Error::DimsMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
