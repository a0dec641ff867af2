//! Desk-scale training toolkit for low-rank transformers with 2:4
//! structured activation sparsity.

pub mod bench;
pub mod costmodel;
pub mod error;
pub mod model;
pub mod optim;
pub mod numerics;
pub mod sparsity;
pub mod train;

pub use error::{ElasError, Result};
pub use numerics::{Matrix, Scalar};
