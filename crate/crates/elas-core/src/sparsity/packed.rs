//! Packed 2:4 storage and the software sparse-times-dense kernel.
//!
//! The packed layout mirrors the hardware format: two kept values per group
//! of 4 plus a 2-bit position code per kept value. `spmm` reads only the
//! packed values and metadata; it is the software stand-in for the sparse
//! tensor-core kernel.

use crate::error::{ElasError, Result};
use crate::numerics::{Matrix, Scalar};

/// 2:4-compressed matrix: 2 kept values per aligned group of 4, group-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Packed24Tensor<T> {
    rows: usize,
    cols: usize,
    /// rows * cols / 2 kept values, in ascending position order per group.
    values: Vec<T>,
    /// One position code (0..=3) per kept value, distinct and ascending
    /// within each group.
    meta: Vec<u8>,
}

impl<T: Scalar> Packed24Tensor<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn meta(&self) -> &[u8] {
        &self.meta
    }

    /// Fraction of stored values that are exactly zero (fill slots included).
    pub fn stored_zero_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        let zeros = self.values.iter().filter(|&&v| v == T::zero()).count();
        zeros as f64 / self.values.len() as f64
    }
}

/// Compress a pattern-valid matrix. Groups with fewer than 2 natural
/// nonzeros are filled up to 2 slots with the lowest unused positions and a
/// stored value of 0, so the layout stays uniform.
pub fn pack<T: Scalar>(z_sparse: &Matrix<T>) -> Result<Packed24Tensor<T>> {
    if z_sparse.cols() % 4 != 0 {
        return Err(ElasError::ShapeMismatch {
            op: "pack",
            detail: format!("cols = {} not divisible by 4", z_sparse.cols()),
        });
    }
    let groups_per_row = z_sparse.cols() / 4;
    let mut values = Vec::with_capacity(z_sparse.rows() * z_sparse.cols() / 2);
    let mut meta = Vec::with_capacity(values.capacity());
    for i in 0..z_sparse.rows() {
        let row = z_sparse.row(i);
        for g in 0..groups_per_row {
            let group = &row[g * 4..g * 4 + 4];
            let nonzero: Vec<usize> = (0..4).filter(|&j| group[j] != T::zero()).collect();
            if nonzero.len() > 2 {
                return Err(ElasError::PatternViolation {
                    row: i,
                    group: g,
                    nonzeros: nonzero.len(),
                });
            }
            let mut keep = nonzero;
            let mut fill = 0usize;
            while keep.len() < 2 {
                while keep.contains(&fill) {
                    fill += 1;
                }
                keep.push(fill);
                fill += 1;
            }
            keep.sort_unstable();
            for &pos in &keep {
                values.push(group[pos]);
                meta.push(pos as u8);
            }
        }
    }
    Ok(Packed24Tensor {
        rows: z_sparse.rows(),
        cols: z_sparse.cols(),
        values,
        meta,
    })
}

/// Expand back to a dense matrix with zeros at unmarked positions.
pub fn unpack<T: Scalar>(p: &Packed24Tensor<T>) -> Result<Matrix<T>> {
    let groups_per_row = p.cols / 4;
    let mut out = Matrix::zeros(p.rows, p.cols);
    for i in 0..p.rows {
        for g in 0..groups_per_row {
            let slot = (i * groups_per_row + g) * 2;
            let p0 = p.meta[slot];
            let p1 = p.meta[slot + 1];
            if p0 >= p1 || p1 > 3 {
                return Err(ElasError::MalformedMeta { row: i, group: g });
            }
            out[(i, g * 4 + p0 as usize)] = p.values[slot];
            out[(i, g * 4 + p1 as usize)] = p.values[slot + 1];
        }
    }
    Ok(out)
}

/// Packed sparse times dense: `unpack(p) * w`, computed directly from the
/// packed values and position metadata.
pub fn spmm<T: Scalar>(p: &Packed24Tensor<T>, w: &Matrix<T>) -> Result<Matrix<T>> {
    if p.cols != w.rows() {
        return Err(ElasError::ShapeMismatch {
            op: "spmm",
            detail: format!("{}x{} times {}x{}", p.rows, p.cols, w.rows(), w.cols()),
        });
    }
    let groups_per_row = p.cols / 4;
    let n = w.cols();
    let mut out = Matrix::zeros(p.rows, n);
    for i in 0..p.rows {
        for g in 0..groups_per_row {
            let slot = (i * groups_per_row + g) * 2;
            for s in 0..2 {
                let v = p.values[slot + s];
                if v == T::zero() {
                    continue;
                }
                let k = g * 4 + p.meta[slot + s] as usize;
                let wrow = w.row(k);
                let orow = out.row_mut(i);
                for j in 0..n {
                    orow[j] = orow[j] + v * wrow[j];
                }
            }
        }
    }
    Ok(out)
}

impl Packed24Tensor<f32> {
    /// Checkpoint wire format, little-endian: rows u64, cols u64, raw f32
    /// values, then one byte per kept value (low 2 bits carry the position).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + self.values.len() * 5);
        buf.extend_from_slice(&(self.rows as u64).to_le_bytes());
        buf.extend_from_slice(&(self.cols as u64).to_le_bytes());
        for &v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&self.meta);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| ElasError::Checkpoint(format!("packed tensor: {msg}"));
        if bytes.len() < 16 {
            return Err(bad("truncated header"));
        }
        let rows = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if cols % 4 != 0 {
            return Err(bad("cols not divisible by 4"));
        }
        let kept = rows * cols / 2;
        let expected = 16 + kept * 4 + kept;
        if bytes.len() != expected {
            return Err(bad("payload length mismatch"));
        }
        let mut values = Vec::with_capacity(kept);
        for c in bytes[16..16 + kept * 4].chunks_exact(4) {
            values.push(f32::from_le_bytes(c.try_into().unwrap()));
        }
        let meta = bytes[16 + kept * 4..].to_vec();
        if meta.iter().any(|&m| m > 3) {
            return Err(bad("position code out of range"));
        }
        Ok(Packed24Tensor {
            rows,
            cols,
            values,
            meta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{matmul, rel_frobenius, xavier_init};
    use crate::sparsity::sparsify_naive;

    #[test]
    fn direct_encoding_example() {
        let z = Matrix::from_rows(&[vec![3.0f32, 0.0, 0.0, 2.0]]);
        let p = pack(&z).unwrap();
        assert_eq!(p.values(), &[3.0, 2.0]);
        assert_eq!(p.meta(), &[0, 3]);
    }

    #[test]
    fn single_nonzero_gets_lowest_unused_fill() {
        let z = Matrix::from_rows(&[vec![0.0f32, 0.0, 5.0, 0.0]]);
        let p = pack(&z).unwrap();
        // positions ascending per the packed invariant: fill slot 0, value 5 at 2
        assert_eq!(p.meta(), &[0, 2]);
        assert_eq!(p.values(), &[0.0, 5.0]);
        assert_eq!(unpack(&p).unwrap(), z);
    }

    #[test]
    fn pattern_violation_reports_location() {
        let z = Matrix::from_rows(&[
            vec![1.0f32, 0.0, 0.0, 1.0],
            vec![0.0, 2.0, 2.0, 2.0],
        ]);
        match pack(&z) {
            Err(ElasError::PatternViolation { row, group, nonzeros }) => {
                assert_eq!((row, group, nonzeros), (1, 0, 3));
            }
            other => panic!("expected pattern violation, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_on_random_sparsified() {
        for seed in 0..10u64 {
            let z = sparsify_naive(&xavier_init::<f32>(9, 32, seed)).unwrap();
            let p = pack(&z).unwrap();
            assert_eq!(unpack(&p).unwrap(), z);
        }
    }

    #[test]
    fn unpack_examples() {
        let p = pack(&Matrix::from_rows(&[vec![3.0f32, 0.0, 0.0, 2.0]])).unwrap();
        assert_eq!(unpack(&p).unwrap().data(), &[3.0, 0.0, 0.0, 2.0]);

        let zeros = Matrix::<f32>::zeros(3, 8);
        let p = pack(&zeros).unwrap();
        assert_eq!(unpack(&p).unwrap(), zeros);
    }

    #[test]
    fn malformed_meta_is_error() {
        let z = Matrix::from_rows(&[vec![1.0f32, 2.0, 0.0, 0.0]]);
        let mut p = pack(&z).unwrap();
        p.meta[1] = p.meta[0]; // duplicate position
        assert!(matches!(
            unpack(&p),
            Err(ElasError::MalformedMeta { row: 0, group: 0 })
        ));
    }

    #[test]
    fn spmm_identity_pattern() {
        let z = sparsify_naive(&xavier_init::<f32>(4, 8, 2)).unwrap();
        let p = pack(&z).unwrap();
        let out = spmm(&p, &Matrix::identity(8)).unwrap();
        assert_eq!(out, unpack(&p).unwrap());
    }

    #[test]
    fn spmm_matches_dense_oracle() {
        for &(m, k, n) in &[(3usize, 8usize, 5usize), (16, 64, 16), (8, 256, 8)] {
            let z = sparsify_naive(&xavier_init::<f32>(m, k, (m + k) as u64)).unwrap();
            let w = xavier_init::<f32>(k, n, (k * n) as u64);
            let p = pack(&z).unwrap();
            let sparse = spmm(&p, &w).unwrap();
            let dense = matmul(&unpack(&p).unwrap(), &w).unwrap();
            assert!(rel_frobenius(&sparse, &dense) < 1e-5);
        }
    }

    #[test]
    fn spmm_dimension_mismatch() {
        let p = pack(&Matrix::<f32>::zeros(2, 8)).unwrap();
        assert!(spmm(&p, &Matrix::<f32>::zeros(4, 4)).is_err());
    }

    #[test]
    fn serialization_round_trip_and_errors() {
        let z = sparsify_naive(&xavier_init::<f32>(5, 16, 8)).unwrap();
        let p = pack(&z).unwrap();
        let bytes = p.to_bytes();
        let q = Packed24Tensor::from_bytes(&bytes).unwrap();
        assert_eq!(p, q);

        assert!(Packed24Tensor::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Packed24Tensor::from_bytes(&bytes[..8]).is_err());
    }
}
