//! Microbenchmarks: sparsify variants, pack/unpack, and packed spmm
//! against the dense matmul it replaces. Throughput numbers are telemetry;
//! correctness is covered by the core test suites.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use elas_bench::kernel_inputs;
use elas_core::numerics::matmul;
use elas_core::sparsity::{pack, sparsify, spmm, unpack, SparsifierKind, SparsifierVariant};

const SHAPES: [(usize, usize); 3] = [(256, 256), (512, 1024), (1024, 4096)];
const RHS_COLS: usize = 128;

fn bench_sparsify(c: &mut Criterion) {
    let mut group = c.benchmark_group("sparsify");
    for (rows, cols) in SHAPES {
        let inputs = kernel_inputs(rows, cols, 1, 7);
        group.throughput(Throughput::Elements((rows * cols) as u64));
        for kind in [SparsifierKind::Naive, SparsifierKind::SoftWeights] {
            let variant = SparsifierVariant::of_kind(kind);
            group.bench_with_input(
                BenchmarkId::new(kind.name(), format!("{rows}x{cols}")),
                &inputs.dense,
                |b, z| b.iter(|| sparsify(black_box(z), &variant).unwrap()),
            );
        }
        let mut calibrated = SparsifierVariant::of_kind(SparsifierKind::SoftActivation);
        calibrated.calibrate(&inputs.dense).unwrap();
        group.bench_with_input(
            BenchmarkId::new("soft_activation", format!("{rows}x{cols}")),
            &inputs.dense,
            |b, z| b.iter(|| sparsify(black_box(z), &calibrated).unwrap()),
        );
    }
    group.finish();
}

fn bench_pack_unpack(c: &mut Criterion) {
    let mut group = c.benchmark_group("pack");
    for (rows, cols) in SHAPES {
        let inputs = kernel_inputs(rows, cols, 1, 11);
        group.throughput(Throughput::Elements((rows * cols) as u64));
        group.bench_with_input(
            BenchmarkId::new("pack", format!("{rows}x{cols}")),
            &inputs.sparse,
            |b, s| b.iter(|| pack(black_box(s)).unwrap()),
        );
        group.bench_with_input(
            BenchmarkId::new("unpack", format!("{rows}x{cols}")),
            &inputs.packed,
            |b, p| b.iter(|| unpack(black_box(p)).unwrap()),
        );
    }
    group.finish();
}

fn bench_spmm_vs_dense(c: &mut Criterion) {
    let mut group = c.benchmark_group("spmm_vs_dense");
    for (rows, cols) in SHAPES {
        let inputs = kernel_inputs(rows, cols, RHS_COLS, 13);
        group.throughput(Throughput::Elements((rows * cols * RHS_COLS) as u64));
        group.bench_function(BenchmarkId::new("spmm_packed", format!("{rows}x{cols}")), |b| {
            b.iter(|| spmm(black_box(&inputs.packed), black_box(&inputs.rhs)).unwrap())
        });
        group.bench_function(BenchmarkId::new("dense_matmul", format!("{rows}x{cols}")), |b| {
            b.iter(|| matmul(black_box(&inputs.dense), black_box(&inputs.rhs)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_sparsify, bench_pack_unpack, bench_spmm_vs_dense);
criterion_main!(benches);
