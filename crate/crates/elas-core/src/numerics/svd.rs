//! Singular value decomposition via one-sided Jacobi rotations.
//!
//! One-sided Jacobi orthogonalizes the columns of the input; singular
//! values fall out as column norms. It is slow compared to bidiagonal
//! methods but simple, deterministic and accurate at the sizes this crate
//! works with. The `f32` entry point falls back to an `f64` recompute when
//! the native-precision result misses the reconstruction tolerance.

use super::matrix::{matmul, rel_frobenius, Matrix, Scalar};
use crate::error::{ElasError, Result};

/// Maximum Jacobi sweeps before declaring non-convergence.
const MAX_SWEEPS: usize = 10_000;

/// Reconstruction tolerance the public entry point guarantees.
pub const SVD_RECONSTRUCT_TOL: f64 = 1e-5;

/// Thin SVD: `input = U * diag(S) * Vt` with `k = min(rows, cols)`.
#[derive(Debug, Clone)]
pub struct SvdResult<T> {
    /// m x k, orthonormal columns.
    pub u: Matrix<T>,
    /// Singular values, non-increasing, non-negative.
    pub s: Vec<T>,
    /// k x n, orthonormal rows.
    pub vt: Matrix<T>,
}

impl<T: Scalar> SvdResult<T> {
    /// Keep the top `k` singular triplets.
    pub fn truncate(&self, k: usize) -> SvdResult<T> {
        let k = k.min(self.s.len());
        let m = self.u.rows();
        let n = self.vt.cols();
        let mut u = Matrix::zeros(m, k);
        let mut vt = Matrix::zeros(k, n);
        for i in 0..m {
            for j in 0..k {
                u[(i, j)] = self.u[(i, j)];
            }
        }
        for i in 0..k {
            for j in 0..n {
                vt[(i, j)] = self.vt[(i, j)];
            }
        }
        SvdResult {
            u,
            s: self.s[..k].to_vec(),
            vt,
        }
    }

    /// `U * diag(S) * Vt`.
    pub fn reconstruct(&self) -> Matrix<T> {
        let k = self.s.len();
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for j in 0..k {
                us[(i, j)] = us[(i, j)] * self.s[j];
            }
        }
        matmul(&us, &self.vt).expect("factor shapes are consistent by construction")
    }
}

/// Thin SVD of `m`, with an f64 fallback when native precision is not enough.
pub fn svd<T: Scalar>(m: &Matrix<T>) -> Result<SvdResult<T>> {
    if !m.is_finite() {
        return Err(ElasError::NonFinite { op: "svd" });
    }
    let native = jacobi_svd(m)?;
    if rel_frobenius(&native.reconstruct(), m) <= SVD_RECONSTRUCT_TOL {
        return Ok(native);
    }
    let wide = jacobi_svd(&m.cast::<f64>())?;
    Ok(SvdResult {
        u: wide.u.cast::<T>(),
        s: wide.s.iter().map(|&x| T::from_f64(x)).collect(),
        vt: wide.vt.cast::<T>(),
    })
}

fn jacobi_svd<T: Scalar>(m: &Matrix<T>) -> Result<SvdResult<T>> {
    // Work on a tall matrix; for wide inputs decompose the transpose and swap.
    if m.rows() < m.cols() {
        let t = jacobi_svd(&m.transpose())?;
        return Ok(SvdResult {
            u: t.vt.transpose(),
            s: t.s,
            vt: t.u.transpose(),
        });
    }
    let rows = m.rows();
    let k = m.cols();

    // Columns of the working copy; V accumulates the right rotations.
    let mut a: Vec<Vec<f64>> = (0..k)
        .map(|j| (0..rows).map(|i| m[(i, j)].to_f64()).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let mut col = vec![0.0; k];
            col[j] = 1.0;
            col
        })
        .collect();

    let scale = a
        .iter()
        .flat_map(|c| c.iter())
        .fold(0.0f64, |acc, &x| acc.max(x.abs()));
    if scale == 0.0 {
        // Zero matrix: S = 0, pick canonical bases.
        let mut u = Matrix::zeros(rows, k);
        for j in 0..k {
            u[(j, j)] = T::one();
        }
        return Ok(SvdResult {
            u,
            s: vec![T::zero(); k],
            vt: Matrix::identity(k),
        });
    }

    let tol = 1e-14;
    let mut converged = false;
    let mut last_off = 0.0f64;
    for _sweep in 0..MAX_SWEEPS {
        let mut off_max = 0.0f64;
        for p in 0..k {
            for q in (p + 1)..k {
                let (mut app, mut aqq, mut apq) = (0.0f64, 0.0f64, 0.0f64);
                for i in 0..rows {
                    app += a[p][i] * a[p][i];
                    aqq += a[q][i] * a[q][i];
                    apq += a[p][i] * a[q][i];
                }
                let denom = (app * aqq).sqrt();
                if denom == 0.0 || apq.abs() <= tol * denom {
                    continue;
                }
                off_max = off_max.max(apq.abs() / denom);
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let ap = a[p][i];
                    let aq = a[q][i];
                    a[p][i] = c * ap - s * aq;
                    a[q][i] = s * ap + c * aq;
                }
                for i in 0..k {
                    let vp = v[p][i];
                    let vq = v[q][i];
                    v[p][i] = c * vp - s * vq;
                    v[q][i] = s * vp + c * vq;
                }
            }
        }
        last_off = off_max;
        if off_max <= tol * 10.0 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(ElasError::SvdNonConvergence {
            sweeps: MAX_SWEEPS,
            off: last_off,
        });
    }

    // Singular values are column norms; sort descending, stable in index.
    let mut order: Vec<usize> = (0..k).collect();
    let norms: Vec<f64> = a
        .iter()
        .map(|col| col.iter().fold(0.0f64, |acc, &x| acc + x * x).sqrt())
        .collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap().then(i.cmp(&j)));

    let mut u = Matrix::<T>::zeros(rows, k);
    let mut vt = Matrix::<T>::zeros(k, k.max(m.cols()));
    let mut s = Vec::with_capacity(k);
    let zero_cut = scale * f64::from(rows as u32).sqrt() * 1e-13;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    for (slot, &j) in order.iter().enumerate() {
        let sv = norms[j];
        s.push(T::from_f64(sv));
        let col = if sv > zero_cut {
            a[j].iter().map(|&x| x / sv).collect::<Vec<f64>>()
        } else {
            orthonormal_fill(rows, &u_cols)
        };
        for i in 0..rows {
            u[(i, slot)] = T::from_f64(col[i]);
        }
        u_cols.push(col);
        for i in 0..m.cols() {
            vt[(slot, i)] = T::from_f64(v[j][i]);
        }
    }
    Ok(SvdResult { u, s, vt })
}

/// Deterministic completion of a partial orthonormal basis: take the first
/// standard basis vector with a large residual and orthogonalize it.
fn orthonormal_fill(dim: usize, existing: &[Vec<f64>]) -> Vec<f64> {
    for seed in 0..dim {
        let mut cand = vec![0.0f64; dim];
        cand[seed] = 1.0;
        for prev in existing {
            let dot: f64 = cand.iter().zip(prev).map(|(&a, &b)| a * b).sum();
            for (c, &p) in cand.iter_mut().zip(prev) {
                *c -= dot * p;
            }
        }
        let norm = cand.iter().fold(0.0f64, |acc, &x| acc + x * x).sqrt();
        if norm > 0.5 {
            for c in cand.iter_mut() {
                *c /= norm;
            }
            return cand;
        }
    }
    unreachable!("cannot complete an orthonormal basis past full dimension")
}
