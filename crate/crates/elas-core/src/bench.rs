//! Microbenchmarks for the sparsify/pack/spmm kernels plus a probe for
//! the natural zero fraction of squared-ReLU activations during training.
//! Timings are engineering telemetry; correctness is enforced through an
//! output checksum compared against a reference oracle.

use crate::error::{ElasError, Result};
use crate::numerics::{matmul, xavier_init, Matrix};
use crate::sparsity::{pack, sparsify, SparsifierKind, SparsifierVariant};
use crate::train::config::TrainConfig;
use crate::train::corpus::Corpus;
use crate::train::trainer::initial_state;
use std::time::Instant;

/// Median-of-N timing with one warm-up pass.
pub const BENCH_REPS: usize = 30;

/// One benchmark row: what ran, how fast, and a checksum proving the
/// output matched the reference oracle on every repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub op: String,
    pub rows: usize,
    pub cols: usize,
    pub reps: usize,
    pub median_ns: u64,
    /// Elements processed per second at the median timing.
    pub throughput: f64,
    pub checksum: u32,
}

impl BenchReport {
    pub fn csv_header() -> &'static str {
        "op,rows,cols,reps,median_ns,throughput,checksum"
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6e},{:#010x}",
            self.op, self.rows, self.cols, self.reps, self.median_ns, self.throughput, self.checksum
        )
    }
}

fn checksum_f32(data: &[f32]) -> u32 {
    let mut hasher = crc32fast::Hasher::new();
    for v in data {
        hasher.update(&v.to_le_bytes());
    }
    hasher.finalize()
}

fn time_reps<F: FnMut() -> Result<u32>>(reps: usize, mut f: F) -> Result<(u64, u32)> {
    let checksum = f()?; // warm-up, also establishes the reference checksum
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        let c = f()?;
        times.push(t0.elapsed().as_nanos() as u64);
        if c != checksum {
            return Err(ElasError::NonFinite { op: "bench checksum drift" });
        }
    }
    times.sort_unstable();
    Ok((times[times.len() / 2], checksum))
}

fn report(op: String, rows: usize, cols: usize, median_ns: u64, checksum: u32) -> BenchReport {
    let elements = (rows * cols) as f64;
    BenchReport {
        op,
        rows,
        cols,
        reps: BENCH_REPS,
        median_ns,
        throughput: elements / (median_ns.max(1) as f64 * 1e-9),
        checksum,
    }
}

/// Benchmark the sparsify kernels. Each repetition's output is checksummed
/// and checked against a brute-force per-group oracle once per shape.
pub fn bench_sparsify(
    shapes: &[(usize, usize)],
    variants: &[SparsifierKind],
    seed: u64,
) -> Result<Vec<BenchReport>> {
    let mut out = Vec::new();
    for &(rows, cols) in shapes {
        let input: Matrix<f32> = xavier_init(rows, cols, seed);
        for &kind in variants {
            let variant = calibrated(kind, &input)?;
            let (median_ns, checksum) = time_reps(BENCH_REPS, || {
                let s = sparsify(&input, &variant)?;
                Ok(checksum_f32(s.data()))
            })?;
            // Only the naive kernel has a brute-force reference cheap enough
            // to run per shape; the soft variants are pinned to closed forms
            // by their unit tests.
            if kind == SparsifierKind::Naive {
                let oracle = oracle_sparsify(&input)?;
                if checksum != checksum_f32(oracle.data()) {
                    return Err(ElasError::NonFinite { op: "sparsify differs from oracle" });
                }
            }
            out.push(report(
                format!("sparsify_{}", kind.name()),
                rows,
                cols,
                median_ns,
                checksum,
            ));
        }
    }
    Ok(out)
}

/// Benchmark packing of a 2:4-sparsified matrix.
pub fn bench_pack(shapes: &[(usize, usize)], seed: u64) -> Result<Vec<BenchReport>> {
    let mut out = Vec::new();
    for &(rows, cols) in shapes {
        let input: Matrix<f32> = xavier_init(rows, cols, seed);
        let sparse = sparsify(&input, &SparsifierVariant::naive())?;
        let (median_ns, checksum) = time_reps(BENCH_REPS, || {
            let packed = pack(&sparse)?;
            let mut hasher = crc32fast::Hasher::new();
            hasher.update(&checksum_f32(packed.values()).to_le_bytes());
            hasher.update(packed.meta());
            Ok(hasher.finalize())
        })?;
        out.push(report("pack".to_string(), rows, cols, median_ns, checksum));
    }
    Ok(out)
}

/// Benchmark structured-sparse matmul against dense matmul on the same
/// operands; emits a row for each so throughputs can be compared.
pub fn bench_spmm(shapes: &[(usize, usize)], seed: u64) -> Result<Vec<BenchReport>> {
    let mut out = Vec::new();
    for &(rows, cols) in shapes {
        let lhs: Matrix<f32> = xavier_init(rows, cols, seed);
        let rhs: Matrix<f32> = xavier_init(cols, rows.min(256), seed ^ 1);
        let sparse = sparsify(&lhs, &SparsifierVariant::naive())?;
        let packed = pack(&sparse)?;

        let dense_ref = matmul(&sparse, &rhs)?;
        let dense_sum = checksum_f32(dense_ref.data());

        let (ns_sparse, sum_sparse) = time_reps(BENCH_REPS, || {
            let y = crate::sparsity::spmm(&packed, &rhs)?;
            Ok(checksum_f32(y.data()))
        })?;
        if sum_sparse != dense_sum {
            return Err(ElasError::NonFinite { op: "spmm differs from dense oracle" });
        }
        out.push(report("spmm".to_string(), rows, cols, ns_sparse, sum_sparse));

        let (ns_dense, sum_dense) = time_reps(BENCH_REPS, || {
            let y = matmul(&lhs, &rhs)?;
            Ok(checksum_f32(y.data()))
        })?;
        out.push(report("dense_matmul".to_string(), rows, cols, ns_dense, sum_dense));
    }
    Ok(out)
}

fn calibrated(kind: SparsifierKind, sample: &Matrix<f32>) -> Result<SparsifierVariant> {
    let mut v = SparsifierVariant::of_kind(kind);
    if kind == SparsifierKind::SoftActivation {
        v.calibrate(sample)?;
    }
    Ok(v)
}

/// Reference sparsifier: per group of 4, keep the top-2 magnitudes (ties
/// to the lower index), applied without any of the kernel's shortcuts.
fn oracle_sparsify(z: &Matrix<f32>) -> Result<Matrix<f32>> {
    let mut out = Matrix::zeros(z.rows(), z.cols());
    for r in 0..z.rows() {
        for g in 0..z.cols() / 4 {
            let base = g * 4;
            let mut idx = [0usize, 1, 2, 3];
            idx.sort_by(|&a, &b| {
                let (ma, mb) = (z[(r, base + a)].abs(), z[(r, base + b)].abs());
                mb.partial_cmp(&ma).unwrap().then(a.cmp(&b))
            });
            for &k in &idx[..2] {
                out[(r, base + k)] = z[(r, base + k)];
            }
        }
    }
    Ok(out)
}

/// Train briefly and record the fraction of exact zeros in the squared-ReLU
/// activations at every step.
pub fn probe_natural_sparsity(cfg: &TrainConfig, steps: u64) -> Result<Vec<(u64, f64)>> {
    let corpus = Corpus::load(std::path::Path::new(&cfg.corpus))?;
    let mut state = initial_state(cfg)?;
    let schedule = crate::optim::LrSchedule::new(cfg.base_lr, cfg.min_lr);
    let mut timeline = Vec::new();
    for step in 0..steps {
        let batch = corpus.train_batch(cfg.seed, step, cfg.batch_size, cfg.seq_len)?;
        let mut grads = crate::model::ModelGrads::zeros_like(&state.model);
        let mut frac = 0.0;
        for seq in &batch {
            let out = state.model.forward(seq, step >= cfg.n_warmup)?;
            frac += out.saved.ffn_natural_sparsity();
            grads.add_assign(&state.model.backward(&out.saved)?);
        }
        grads.scale(1.0 / batch.len() as f32);
        frac /= batch.len() as f64;
        timeline.push((step, frac));
        state
            .opt
            .step_approx(&mut state.model, &grads, schedule.lr_at(step, steps))?;
    }
    Ok(timeline)
}

pub fn sparsity_timeline_csv(timeline: &[(u64, f64)]) -> String {
    let mut text = String::from("step,zero_fraction\n");
    for (step, frac) in timeline {
        text.push_str(&format!("{step},{frac:.6e}\n"));
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparsify_reports_match_oracle_checksums() {
        let reports = bench_sparsify(
            &[(32, 64), (16, 128)],
            &[SparsifierKind::Naive, SparsifierKind::SoftWeights],
            7,
        )
        .unwrap();
        assert_eq!(reports.len(), 4);
        for r in &reports {
            assert!(r.median_ns > 0);
            assert!(r.throughput > 0.0);
        }
        // one row per (shape, variant)
        let again = bench_sparsify(&[(32, 64)], &[SparsifierKind::Naive], 7).unwrap();
        assert_eq!(again[0].checksum, reports[0].checksum);
    }

    #[test]
    fn spmm_and_dense_rows_come_in_pairs() {
        let reports = bench_spmm(&[(16, 32)], 3).unwrap();
        assert_eq!(reports.len(), 2);
        assert_eq!(reports[0].op, "spmm");
        assert_eq!(reports[1].op, "dense_matmul");
    }

    #[test]
    fn pack_checksums_are_stable() {
        let a = bench_pack(&[(8, 16)], 11).unwrap();
        let b = bench_pack(&[(8, 16)], 11).unwrap();
        assert_eq!(a[0].checksum, b[0].checksum);
    }

    #[test]
    fn natural_sparsity_near_half_at_init() {
        let mut cfg = TrainConfig::default();
        cfg.corpus = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/corpus.txt").to_string();
        cfg.n_warmup = 10; // dense phase throughout the probe
        let timeline = probe_natural_sparsity(&cfg, 3).unwrap();
        assert_eq!(timeline.len(), 3);
        for (_, frac) in &timeline {
            assert!(*frac >= 0.0 && *frac <= 1.0);
        }
        assert!(
            (timeline[0].1 - 0.5).abs() <= 0.1,
            "zero fraction at init was {}",
            timeline[0].1
        );
    }
}
