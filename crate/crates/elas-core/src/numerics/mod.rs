//! Deterministic dense linear algebra and seeded initialization.

mod init;
mod matrix;
mod svd;

pub use init::{xavier_init, SeedStream};
pub use matrix::{matmul, rel_frobenius, Matrix, Scalar};
pub use svd::{svd, SvdResult, SVD_RECONSTRUCT_TOL};
