//! SE(3) pose algebra and the weighted Procrustes solver.

pub mod linalg;
mod pose;
mod procrustes;

pub use pose::{rotation_angle, slerp, Action, Pose};
pub use procrustes::{solve_weighted_procrustes, weighted_residual, WeightedPointSet};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Se3Error {
    #[error("matrix is not a proper rotation (|R^T R - I| = {ortho_error:e}, det = {det})")]
    NotARotation { ortho_error: f64, det: f64 },
    #[error("non-finite value")]
    NonFinite,
    #[error("expected {expected} values, got {got}")]
    BadLength { expected: usize, got: usize },
    #[error("last homogeneous row must be exactly (0, 0, 0, 1)")]
    BadHomogeneousRow,
    #[error("flag must be 0 or 1, got {0}")]
    BadFlag(f64),
    #[error("weights must be finite and nonnegative")]
    InvalidWeight,
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("all weights are zero")]
    AllZeroWeights,
}
