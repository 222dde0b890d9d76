//! Crate-wide error type and exit-code mapping for the CLI.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The rotation angle of a transform reached the injectivity radius of
    /// SE(3); the principal logarithm is ambiguous there and we refuse to
    /// pick a branch.
    #[error("branch ambiguity: rotation angle {angle:.6} rad is within {epsilon:.1e} of pi")]
    BranchAmbiguity { angle: f64, epsilon: f64 },

    #[error("invalid kinematic tree: {0}")]
    InvalidTree(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("interior mask has no boundary voxels")]
    EmptyBoundary,

    #[error("weight solve diverged after {iterations} iterations (step too large)")]
    Diverged { iterations: usize },

    #[error("query point lies on the surface (distance {distance:.3e} <= {epsilon:.3e})")]
    OnSurface { distance: f64, epsilon: f64 },

    #[error("twist rotation norm {norm:.4} exceeds linearization guard {limit:.4}")]
    TwistTooLarge { norm: f64, limit: f64 },

    #[error("grid too small: need at least 3 voxels per axis, got {dims:?}")]
    GridTooSmall { dims: [usize; 3] },

    #[error("invalid phantom spec: {0}")]
    SpecInvalid(String),

    #[error("malformed volume header: {0}")]
    MalformedHeader(String),

    #[error("payload size mismatch: expected {expected} bytes, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("face at line {line} is not a triangle")]
    NonTriangleFace { line: usize },

    #[error("mesh is not closed and oriented: {0}")]
    OpenMesh(String),

    #[error("face references vertex {index} but mesh has {count} vertices")]
    BadIndex { index: usize, count: usize },

    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("json parse failure: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Process exit code for the CLI: 2 for data errors, 3 for numerical
    /// failures. Usage errors (exit 1) are handled by the argument parser.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BranchAmbiguity { .. }
            | Error::Diverged { .. }
            | Error::OnSurface { .. }
            | Error::TwistTooLarge { .. } => 3,
            _ => 2,
        }
    }
}
