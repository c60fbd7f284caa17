//! Deterministic numeric kernel: seeded streams, dense matrices, Jacobi
//! eigendecomposition, orthonormal bases and Procrustes distances.

mod eigen;
mod matrix;
mod procrustes;
mod rng;

pub use eigen::{
    orthonormality_error, orthonormalize_columns, random_orthonormal_basis, symmetric_eigen,
    SymmetricEigen,
};
pub use matrix::{dot, norm, norm_sq, project_to_ball, Matrix};
pub use procrustes::{procrustes_min_distance_sq, singular_values};
pub use rng::RngStream;

/// Plain owned vector of reals.
pub type Vector = Vec<f64>;
