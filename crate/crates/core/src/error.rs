use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {field}: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        field: String,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("{field}: value {value} at index {index} outside [0, 1023] DN")]
    DnOutOfRange {
        field: String,
        index: usize,
        value: f64,
    },

    #[error("delays: gate delays must be strictly increasing, got {0:?} ns")]
    NonMonotoneDelays([f64; 3]),

    #[error("invalid {field}: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("range grid is empty")]
    EmptyGrid,

    #[error("range grid not strictly ascending at index {index}")]
    NonAscendingGrid { index: usize },

    #[error("chebyshev fit of degree {degree} needs at least {needed} samples, got {found}")]
    InsufficientSamples {
        degree: usize,
        needed: usize,
        found: usize,
    },

    #[error("sample at r = {range} m lies outside domain [{}, {}] m", .domain.0, .domain.1)]
    SamplesOutsideDomain { range: f64, domain: (f64, f64) },

    #[error("r = {range} m is outside profile domain [{}, {}] m", .domain.0, .domain.1)]
    OutOfDomain { range: f64, domain: (f64, f64) },

    #[error("profiles do not share a common domain")]
    ProfileDomainMismatch,

    #[error("stack has no ambient frame")]
    MissingAmbientFrame,

    #[error("all profiles vanish at r = {range} m")]
    ZeroProfileNorm { range: f64 },

    #[error("mask selects no bins")]
    EmptyMask,

    #[error("prediction is invalid at index {index} inside the evaluated region")]
    InvalidPrediction { index: usize },

    #[error("no ground-truth points to evaluate")]
    ZeroEvaluatedPoints,

    #[error("expected a positive value, got {0}")]
    NonPositiveInput(f64),

    #[error("sparse sample ({col}, {row}) outside {width}x{height} frame")]
    SampleOutOfFrame {
        col: usize,
        row: usize,
        width: usize,
        height: usize,
    },

    #[error("sparse sample ({col}, {row}) has non-positive range {range}")]
    NonPositiveRange { col: usize, row: usize, range: f64 },

    #[error("duplicate sparse sample at ({col}, {row})")]
    DuplicateSample { col: usize, row: usize },

    #[error("malformed file {}: {reason}", .path.display())]
    MalformedFile { path: PathBuf, reason: String },

    #[error("{}: value {value} at index {index} exceeds 1023 DN", .path.display())]
    ValueOverflow {
        path: PathBuf,
        index: usize,
        value: u32,
    },

    #[error("{}: payload holds {found} bytes, header implies {expected}", .path.display())]
    SizeMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::MalformedFile {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}
