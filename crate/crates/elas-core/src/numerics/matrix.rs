//! Dense row-major matrices.
//!
//! `Matrix<T>` is the universal numeric carrier for the whole crate. The
//! training dtype is `f32`; everything is generic over [`Scalar`] so the
//! same code paths can be re-run in `f64` for finite-difference checks.
//!
//! All reductions use a fixed loop order, so repeated calls on identical
//! inputs are bit-identical.

use crate::error::{ElasError, Result};
use num_traits::Float;
use std::ops::{Index, IndexMut};

/// Element types the numeric kernels accept.
pub trait Scalar: Float + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Dense 2-D array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert!(self.same_shape(other), "zip_map shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert!(self.same_shape(other), "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    /// Frobenius norm, accumulated in f64 regardless of element type.
    pub fn frobenius_norm(&self) -> f64 {
        let mut acc = 0.0f64;
        for &v in &self.data {
            let x = v.to_f64();
            acc += x * x;
        }
        acc.sqrt()
    }

    /// Flat inner product `<self, other>`, accumulated in f64.
    pub fn dot(&self, other: &Self) -> f64 {
        assert!(self.same_shape(other), "dot shape mismatch");
        let mut acc = 0.0f64;
        for (&a, &b) in self.data.iter().zip(&other.data) {
            acc += a.to_f64() * b.to_f64();
        }
        acc
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

impl<T: Scalar> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T: Scalar> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Standard product `a * b` with a fixed i-k-j loop order.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return Err(ElasError::ShapeMismatch {
            op: "matmul",
            detail: format!(
                "{}x{} times {}x{}",
                a.rows, a.cols, b.rows, b.cols
            ),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    let n = b.cols;
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == T::zero() {
                continue;
            }
            let brow = &b.data[k * n..(k + 1) * n];
            let orow = &mut out.data[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + aik * brow[j];
            }
        }
    }
    Ok(out)
}

/// Relative Frobenius distance `|a - b|_F / max(|b|_F, tiny)`.
pub fn rel_frobenius<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> f64 {
    let denom = b.frobenius_norm().max(1e-300);
    a.sub(b).frobenius_norm() / denom
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::xavier_init;

    #[test]
    fn identity_times_matrix() {
        let m = Matrix::from_rows(&[vec![1.0f32, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]]);
        let out = matmul(&Matrix::identity(3), &m).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn hand_arithmetic() {
        let a = Matrix::from_rows(&[vec![1.0f32, 2.0], vec![3.0, 4.0]]);
        let b = Matrix::from_rows(&[vec![0.0f32], vec![1.0]]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    #[test]
    fn matches_naive_triple_loop() {
        let a = xavier_init::<f32>(7, 5, 11);
        let b = xavier_init::<f32>(5, 3, 12);
        let c = matmul(&a, &b).unwrap();
        // naive i-j-k oracle; the kernel sums over k in ascending order for
        // every output cell, so the two must agree bit for bit
        for i in 0..7 {
            for j in 0..3 {
                let mut acc = 0.0f32;
                for k in 0..5 {
                    acc += a[(i, k)] * b[(k, j)];
                }
                assert_eq!(c[(i, j)], acc);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let a = Matrix::<f32>::zeros(2, 3);
        let b = Matrix::<f32>::zeros(4, 2);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn matmul_associative_within_tolerance() {
        for seed in 0..5u64 {
            let a = xavier_init::<f32>(8, 6, seed * 3 + 1);
            let b = xavier_init::<f32>(6, 7, seed * 3 + 2);
            let c = xavier_init::<f32>(7, 5, seed * 3 + 3);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            assert!(rel_frobenius(&left, &right) < 1e-4);

            let a = a.cast::<f64>();
            let b = b.cast::<f64>();
            let c = c.cast::<f64>();
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            assert!(rel_frobenius(&left, &right) < 1e-10);
        }
    }

    #[test]
    fn matmul_is_deterministic() {
        let a = xavier_init::<f32>(16, 16, 5);
        let b = xavier_init::<f32>(16, 16, 6);
        let c1 = matmul(&a, &b).unwrap();
        let c2 = matmul(&a, &b).unwrap();
        assert_eq!(c1, c2);
    }
}
