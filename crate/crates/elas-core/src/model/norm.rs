//! RMS normalization with a learnable per-feature gain.

use crate::numerics::{Matrix, Scalar};

const RMS_EPS: f64 = 1e-6;

/// y[:, j] = gain ⊙ x[:, j] / rms(x[:, j])
#[derive(Debug, Clone)]
pub struct RmsNorm<T> {
    /// d x 1
    pub gain: Matrix<T>,
}

#[derive(Debug, Clone)]
pub struct NormSaved<T> {
    pub x: Matrix<T>,
    /// One reciprocal RMS per column.
    pub inv_rms: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct NormGrads<T> {
    pub grad_gain: Matrix<T>,
    pub grad_x: Matrix<T>,
}

impl<T: Scalar> RmsNorm<T> {
    pub fn ones(dim: usize) -> Self {
        RmsNorm {
            gain: Matrix::from_vec(dim, 1, vec![T::one(); dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.rows()
    }

    pub fn forward(&self, x: &Matrix<T>) -> (Matrix<T>, NormSaved<T>) {
        let d = x.rows();
        let eps = T::from_f64(RMS_EPS);
        let dinv = T::from_f64(1.0 / d as f64);
        let mut out = Matrix::zeros(d, x.cols());
        let mut inv_rms = Vec::with_capacity(x.cols());
        for j in 0..x.cols() {
            let mut ms = T::zero();
            for i in 0..d {
                let v = x[(i, j)];
                ms = ms + v * v;
            }
            let inv = T::one() / (ms * dinv + eps).sqrt();
            inv_rms.push(inv);
            for i in 0..d {
                out[(i, j)] = self.gain[(i, 0)] * x[(i, j)] * inv;
            }
        }
        (
            out,
            NormSaved {
                x: x.clone(),
                inv_rms,
            },
        )
    }

    pub fn backward(&self, saved: &NormSaved<T>, grad_y: &Matrix<T>) -> NormGrads<T> {
        let d = saved.x.rows();
        let n = saved.x.cols();
        let dinv = T::from_f64(1.0 / d as f64);
        let mut grad_gain = Matrix::zeros(d, 1);
        let mut grad_x = Matrix::zeros(d, n);
        for j in 0..n {
            let inv = saved.inv_rms[j];
            // s = sum_i grad_y_i * gain_i * x_i
            let mut s = T::zero();
            for i in 0..d {
                let xv = saved.x[(i, j)];
                let gy = grad_y[(i, j)];
                grad_gain[(i, 0)] = grad_gain[(i, 0)] + gy * xv * inv;
                s = s + gy * self.gain[(i, 0)] * xv;
            }
            let inv3 = inv * inv * inv;
            for i in 0..d {
                let xv = saved.x[(i, j)];
                grad_x[(i, j)] =
                    grad_y[(i, j)] * self.gain[(i, 0)] * inv - s * xv * dinv * inv3;
            }
        }
        NormGrads { grad_gain, grad_x }
    }
}
