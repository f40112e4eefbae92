use thiserror::Error;

/// Errors produced anywhere in the tracking pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("conic is not an ellipse (b^2 - ac = {discriminant:e})")]
    NotAnEllipse { discriminant: f64 },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("invalid ellipse parameters: {0}")]
    InvalidParams(String),
    #[error(
        "conic passes through the pixel origin and cannot be normalized to a unit constant term"
    )]
    DegenerateNormalization,
    #[error("point or circle lies behind the camera (min depth {depth} m)")]
    BehindCamera { depth: f64 },
    #[error(
        "pose reconstruction ambiguous: candidates differ by {margin_px:.3} px at the anchors"
    )]
    AmbiguityUnresolved { margin_px: f64 },
    #[error("weighted orientation mean is degenerate")]
    DegenerateOrientationMean,
    #[error("unknown landmark label `{0}`")]
    UnknownLabel(String),
    #[error("detections are missing required label `{0}`")]
    MissingLabel(String),
    #[error("all particles have zero weight")]
    AllParticlesDegenerate,
    #[error("needle leaves the image at frame {frame}")]
    OutOfView { frame: usize },
    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("parse error at frame {frame}: {reason}")]
    Parse { frame: usize, reason: String },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
