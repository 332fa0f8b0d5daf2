use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("point ({lat}, {lng}) is more than 1 degree from the projection origin")]
    OutOfProjectionRange { lat: f64, lng: f64 },
    #[error("polyline has zero length")]
    ZeroLength,
    #[error("duplicate consecutive points at index {0}")]
    DuplicatePoint(usize),
    #[error("diffusion step {t} outside 1..={max}")]
    StepOutOfRange { t: usize, max: usize },
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    Shape { expected: [usize; 3], found: [usize; 3] },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("every entry is masked out")]
    AllMasked,
    #[error("non-finite value at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("missing metadata: {0}")]
    MissingMetadata(&'static str),
    #[error("histogram binning mismatch")]
    BinningMismatch,
    #[error("opendrive: {0}")]
    OpenDrive(#[from] OpenDriveError),
}

/// OpenDRIVE reading, writing and validation failures.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OpenDriveError {
    #[error("malformed XML at line {line}: {message}")]
    Malformed { line: u32, message: String },
    #[error("<{element}> at line {line} lacks attribute `{attribute}`")]
    MissingAttribute { element: String, attribute: String, line: u32 },
    #[error("<{element}> at line {line}: `{attribute}` is not a number: {value:?}")]
    InvalidNumber { element: String, attribute: String, value: String, line: u32 },
    #[error("unsupported element <{element}> at line {line}")]
    Unsupported { element: String, line: u32 },
    #[error("missing element <{element}> in {context}")]
    MissingElement { element: String, context: String },
    #[error("road {road}: {detail}")]
    Continuity { road: String, detail: String },
    #[error("invalid document: {0}")]
    Invariant(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
