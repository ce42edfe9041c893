use thiserror::Error;

/// Errors raised across the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("plane has a lateral normal component (nX = {0}); disparity-line form needs nX = 0")]
    NonFphtPlane(f64),
    #[error("plane is not visible at the patch center (disparity offset {0} <= 0)")]
    BehindCamera(f64),
    #[error("disparity line ({a}, {b}) does not describe a visible plane")]
    DegenerateLine { a: f64, b: f64 },
    #[error("hypothesis bound produces a boundary through the optical center")]
    SingularReference,
    #[error("no visible plane orientation inside the hypothesis bounds")]
    EmptyWedge,
    #[error("disparity must be positive, got {0}")]
    NonPositiveDisparity(f64),
    #[error("invalid camera rig: {0}")]
    InvalidRig(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated image data: expected {expected} bytes, got {got}")]
    TruncatedData { expected: usize, got: usize },
    #[error("unsupported channel count {0} (single channel only)")]
    UnsupportedChannels(usize),
    #[error("sample position ({x}, {y}) outside image bounds")]
    OutOfBounds { x: f64, y: f64 },
    #[error("image dimensions {width}x{height} are not even")]
    OddDimensions { width: usize, height: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{excluded} of {total} patch pixels warp outside the image")]
    InsufficientOverlap { excluded: usize, total: usize },
    #[error("ground truth has no {0} pixels")]
    EmptyGroundTruth(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
