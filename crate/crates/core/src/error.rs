use thiserror::Error;

use crate::quadrature::NodeKind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("polynomial degree {degree} is outside {min}..={max} for {kind} nodes")]
    DegreeOutOfRange {
        kind: NodeKind,
        degree: usize,
        min: usize,
        max: usize,
    },

    #[error("singular mass matrix for {kind} nodes with M = {degree}")]
    SingularMassMatrix { kind: NodeKind, degree: usize },

    #[error("invalid method: {0}")]
    InvalidMethod(String),

    #[error("coefficients do not match method: {0}")]
    Mismatch(String),

    #[error("singular stage system at stage {stage} (dt = {dt:e})")]
    SingularStage { stage: usize, dt: f64 },

    #[error("singular implicit system in subnode {node} of iteration {iteration} (dt = {dt:e})")]
    SingularIteration {
        iteration: usize,
        node: usize,
        dt: f64,
    },

    #[error("unsupported tableau structure: {0}")]
    UnsupportedStructure(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("stencil of width {width} does not fit on a periodic grid of {cells} cells")]
    StencilTooWide { width: usize, cells: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
