//! Criterion harness lives in `benches/kernels.rs`; shared helpers here.

use elas_core::numerics::{xavier_init, Matrix};
use elas_core::sparsity::{pack, sparsify, Packed24Tensor, SparsifierVariant};

/// Deterministic benchmark inputs for one problem shape.
pub struct KernelInputs {
    pub dense: Matrix<f32>,
    pub sparse: Matrix<f32>,
    pub packed: Packed24Tensor<f32>,
    pub rhs: Matrix<f32>,
}

pub fn kernel_inputs(rows: usize, cols: usize, n: usize, seed: u64) -> KernelInputs {
    let dense: Matrix<f32> = xavier_init(rows, cols, seed);
    let sparse = sparsify(&dense, &SparsifierVariant::naive()).expect("cols divisible by 4");
    let packed = pack(&sparse).expect("sparsified input always packs");
    let rhs: Matrix<f32> = xavier_init(cols, n, seed ^ 0xBEEF);
    KernelInputs { dense, sparse, packed, rhs }
}
