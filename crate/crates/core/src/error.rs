//! Error types, one enum per subsystem.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManifoldError {
    #[error("target is antipodal to the base point; log is undefined on the cut locus")]
    AntipodalPoint,
    #[error("point {0} lies outside the open interval (0,1)")]
    OutOfDomain(f64),
    #[error("non-finite input")]
    NonFinite,
    #[error("zero quaternion cannot be normalised")]
    ZeroQuaternion,
    #[error("bilinear form matrix is not symmetric")]
    NotSymmetric,
    #[error("bilinear form is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch")]
    DimensionMismatch,
    #[error("ellipsoid radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("tangent vector is attached to a different base point")]
    BaseMismatch,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimplexError {
    #[error("input vector contains NaN or infinity")]
    NonFinite,
    #[error("cannot project an empty vector")]
    Empty,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EslError {
    #[error("loss vector contains NaN or infinity")]
    NonFinite,
    #[error("gamma must be positive, got {0}")]
    NonPositiveGamma(f64),
    #[error("sampling set of size {n} is too small for cut-off J = {j} (need at least J + 2 points)")]
    SamplingTooSmall { n: usize, j: usize },
    #[error("losses are degenerate: estimated gamma is zero")]
    DegenerateLosses,
    #[error("support point at distance {distance} rad from the initial point exceeds pi/2")]
    SupportTooSpread { distance: f64 },
    #[error("empty sampling set")]
    EmptySampling,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Simplex(#[from] SimplexError),
}

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("bundled node file not found: {0}")]
    MissingAsset(PathBuf),
    #[error("malformed node file: {0}")]
    MalformedAsset(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("convex hull construction failed: {0}")]
    Hull(String),
    #[error("grid with {0} points is too large to materialise")]
    TooLarge(u128),
    #[error("exact arithmetic needs rational eta and b; got eta = {eta}, b = {b}")]
    PrecisionExhausted { eta: f64, b: f64 },
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CryoError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("noise level sigma must be positive (images have zero variance)")]
    NonPositiveSigma,
    #[error("initial volume has zero norm")]
    ZeroVolume,
    #[error("projection cache needs {needed} values but the budget is {budget}; use chunked evaluation")]
    MemoryBudget { needed: usize, budget: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Esl(#[from] EslError),
    #[error(transparent)]
    Cryo(#[from] CryoError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("cross-covariance matrix is rank deficient")]
    DegenerateAlignment,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty run")]
    EmptyRun,
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes, expected ESLT")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("unsupported dtype {0}")]
    UnsupportedDtype(u8),
    #[error("payload size mismatch: expected {expected} bytes, found {found}")]
    PayloadSize { expected: usize, found: usize },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
