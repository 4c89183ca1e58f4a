use thiserror::Error;

/// Errors raised by the geometric, reconstruction and localization routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid ellipse: {0}")]
    InvalidEllipse(String),
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
    #[error("invalid ellipsoid: {0}")]
    InvalidEllipsoid(String),
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("degenerate conic")]
    DegenerateConic,
    #[error("quadric is not an ellipsoid")]
    NotAnEllipsoid,
    #[error("point or ellipsoid is behind the camera")]
    BehindCamera,
    #[error("insufficient views for `{label}`: need 3, got {got}")]
    InsufficientViews { label: String, got: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("reconstruction of `{label}` failed: {source}")]
    Reconstruction {
        label: String,
        #[source]
        source: Box<Error>,
    },
    #[error("no real solution")]
    NoSolution,
    #[error("minimizer did not converge (residual {residual:e})")]
    NonConvergence { residual: f64 },
    #[error("not enough objects: {available} matchable detection(s) and no orientation prior")]
    NotEnoughObjects { available: usize },
    #[error("no hypothesis produced a valid pose")]
    NoValidPose,
    #[error("empty point set")]
    EmptyPointSet,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
