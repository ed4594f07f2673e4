//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("ambient dimension must be 2 or 3, got {0}")]
    UnsupportedDimension(usize),
    #[error("coincident points (separation {0:.3e})")]
    CoincidentPoints(f64),
    #[error("vector is not unit length (norm {0})")]
    NonUnitVector(f64),
    #[error("matrix is not skew-symmetric (symmetry residual {0:.3e})")]
    NonSkewMatrix(f64),
    #[error("matrix is not a rotation ({0})")]
    NotARotation(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("framework has no orientations, but the operation needs them")]
    MissingOrientations,
    #[error("framework is degenerate (vertex {vertex} has {out_degree} out-bearings spanning only {span_dim} dimensions)")]
    DegenerateFramework {
        vertex: usize,
        out_degree: usize,
        span_dim: usize,
    },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("random framework generator exceeded the resample limit ({0} attempts)")]
    ResampleLimit(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
