//! Low-rank factored linear layers: `W = A * B`, never materialized.
//!
//! Shape convention used across the whole crate: samples are columns, so a
//! layer maps `x` of shape `d_in x n` to `A * (B * x)` of shape `d_out x n`.

use crate::error::Result;
use crate::numerics::{matmul, xavier_init, Matrix, Scalar, SeedStream};

/// Factor pair representing `W = A * B` with rank `r`.
#[derive(Debug, Clone)]
pub struct LowRankLinear<T> {
    /// d_out x r
    pub a: Matrix<T>,
    /// r x d_in
    pub b: Matrix<T>,
}

/// Gradients of one low-rank layer.
#[derive(Debug, Clone)]
pub struct LrGrads<T> {
    pub grad_a: Matrix<T>,
    pub grad_b: Matrix<T>,
    pub grad_x: Matrix<T>,
}

impl<T: Scalar> LowRankLinear<T> {
    pub fn xavier(d_out: usize, d_in: usize, rank: usize, seeds: &mut SeedStream) -> Self {
        assert!(
            rank >= 1 && rank <= d_out.min(d_in),
            "rank {rank} out of range for {d_out}x{d_in}"
        );
        LowRankLinear {
            a: xavier_init(d_out, rank, seeds.next_seed()),
            b: xavier_init(rank, d_in, seeds.next_seed()),
        }
    }

    pub fn d_out(&self) -> usize {
        self.a.rows()
    }

    pub fn d_in(&self) -> usize {
        self.b.cols()
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    /// True when the rank is above min(d_out, d_in)/2 and the factorization
    /// buys little; callers may want to surface this to the user.
    pub fn rank_above_half_min(&self) -> bool {
        2 * self.rank() > self.d_out().min(self.d_in())
    }

    /// `A * (B * x)`. Returns the intermediate `B * x` for backward.
    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
        let bx = matmul(&self.b, x)?;
        let y = matmul(&self.a, &bx)?;
        Ok((y, bx))
    }

    /// grad_A = grad_y (Bx)^T, grad_B = A^T grad_y x^T, grad_x = B^T A^T grad_y.
    pub fn backward(&self, x: &Matrix<T>, bx: &Matrix<T>, grad_y: &Matrix<T>) -> Result<LrGrads<T>> {
        let grad_a = matmul(grad_y, &bx.transpose())?;
        let at_gy = matmul(&self.a.transpose(), grad_y)?;
        let grad_b = matmul(&at_gy, &x.transpose())?;
        let grad_x = matmul(&self.b.transpose(), &at_gy)?;
        Ok(LrGrads {
            grad_a,
            grad_b,
            grad_x,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rel_frobenius;

    fn identity_factors(d: usize, r: usize) -> LowRankLinear<f64> {
        // A = first r columns of I_d, B = first r rows of I_d
        let mut a = Matrix::zeros(d, r);
        let mut b = Matrix::zeros(r, d);
        for i in 0..r {
            a[(i, i)] = 1.0;
            b[(i, i)] = 1.0;
        }
        LowRankLinear { a, b }
    }

    #[test]
    fn identity_factors_project() {
        let layer = identity_factors(5, 3);
        let x = xavier_init::<f64>(5, 4, 1);
        let (y, _) = layer.forward(&x).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                let want = if i < 3 { x[(i, j)] } else { 0.0 };
                assert_eq!(y[(i, j)], want);
            }
        }
    }

    #[test]
    fn forward_matches_materialized_product() {
        let mut seeds = SeedStream::new(3);
        let layer = LowRankLinear::<f32>::xavier(7, 5, 3, &mut seeds);
        let x = xavier_init::<f32>(5, 6, 9);
        let (y, _) = layer.forward(&x).unwrap();
        let w = matmul(&layer.a, &layer.b).unwrap();
        let oracle = matmul(&w, &x).unwrap();
        assert!(rel_frobenius(&y, &oracle) < 1e-5);
    }

    #[test]
    fn rank_one_outer_product_structure() {
        let mut seeds = SeedStream::new(4);
        let layer = LowRankLinear::<f64>::xavier(6, 4, 1, &mut seeds);
        let x = xavier_init::<f64>(4, 3, 10);
        let (y, bx) = layer.forward(&x).unwrap();
        // y[:, j] = a * (b . x_j): every column proportional to the a vector
        for j in 0..3 {
            for i in 0..6 {
                let want = layer.a[(i, 0)] * bx[(0, j)];
                assert!((y[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_finite_difference() {
        let mut seeds = SeedStream::new(7);
        let layer = LowRankLinear::<f64>::xavier(5, 3, 2, &mut seeds);
        let x = xavier_init::<f64>(3, 4, 11);
        let grad_y = xavier_init::<f64>(5, 4, 12);
        let (_, bx) = layer.forward(&x).unwrap();
        let grads = layer.backward(&x, &bx, &grad_y).unwrap();

        // scalar objective L = <grad_y, forward(x)>
        let loss = |layer: &LowRankLinear<f64>, x: &Matrix<f64>| {
            layer.forward(x).unwrap().0.dot(&grad_y)
        };
        let h = 1e-5;
        for (param, grad) in [(0, &grads.grad_a), (1, &grads.grad_b), (2, &grads.grad_x)] {
            let (rows, cols) = match param {
                0 => (layer.a.rows(), layer.a.cols()),
                1 => (layer.b.rows(), layer.b.cols()),
                _ => (x.rows(), x.cols()),
            };
            for i in 0..rows {
                for j in 0..cols {
                    let mut lp = layer.clone();
                    let mut lm = layer.clone();
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    match param {
                        0 => {
                            lp.a[(i, j)] += h;
                            lm.a[(i, j)] -= h;
                        }
                        1 => {
                            lp.b[(i, j)] += h;
                            lm.b[(i, j)] -= h;
                        }
                        _ => {
                            xp[(i, j)] += h;
                            xm[(i, j)] -= h;
                        }
                    }
                    let fd = (loss(&lp, &xp) - loss(&lm, &xm)) / (2.0 * h);
                    let an = grad[(i, j)];
                    assert!(
                        (fd - an).abs() <= 1e-4 * fd.abs().max(1.0),
                        "param {param} ({i},{j}): fd {fd} vs {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_grad_y_gives_zero_grads() {
        let mut seeds = SeedStream::new(8);
        let layer = LowRankLinear::<f32>::xavier(4, 4, 2, &mut seeds);
        let x = xavier_init::<f32>(4, 2, 5);
        let (_, bx) = layer.forward(&x).unwrap();
        let grads = layer.backward(&x, &bx, &Matrix::zeros(4, 2)).unwrap();
        assert!(grads.grad_a.data().iter().all(|&v| v == 0.0));
        assert!(grads.grad_b.data().iter().all(|&v| v == 0.0));
        assert!(grads.grad_x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_x_of_identity_layer_is_grad_y() {
        let layer = identity_factors(3, 3);
        let x = xavier_init::<f64>(3, 5, 2);
        let grad_y = xavier_init::<f64>(3, 5, 3);
        let (_, bx) = layer.forward(&x).unwrap();
        let grads = layer.backward(&x, &bx, &grad_y).unwrap();
        assert!(rel_frobenius(&grads.grad_x, &grad_y) < 1e-12);
    }

    #[test]
    fn output_in_column_space_of_a() {
        // residual after projecting y onto col(A) must vanish
        let mut seeds = SeedStream::new(12);
        let layer = LowRankLinear::<f64>::xavier(8, 6, 3, &mut seeds);
        let x = xavier_init::<f64>(6, 5, 20);
        let (y, _) = layer.forward(&x).unwrap();
        // least-squares projection via normal equations on A (well-conditioned
        // at these sizes for random factors)
        let at = layer.a.transpose();
        let ata = matmul(&at, &layer.a).unwrap();
        let aty = matmul(&at, &y).unwrap();
        let coef = solve_spd(&ata, &aty);
        let proj = matmul(&layer.a, &coef).unwrap();
        assert!(rel_frobenius(&proj, &y) < 1e-5);
    }

    // tiny Cholesky solve for the projection oracle above
    fn solve_spd(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        let n = a.rows();
        let mut l = Matrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a[(i, j)];
                for k in 0..j {
                    sum -= l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    l[(i, j)] = sum.sqrt();
                } else {
                    l[(i, j)] = sum / l[(j, j)];
                }
            }
        }
        let mut x = b.clone();
        for col in 0..b.cols() {
            for i in 0..n {
                let mut sum = x[(i, col)];
                for k in 0..i {
                    sum -= l[(i, k)] * x[(k, col)];
                }
                x[(i, col)] = sum / l[(i, i)];
            }
            for i in (0..n).rev() {
                let mut sum = x[(i, col)];
                for k in i + 1..n {
                    sum -= l[(k, i)] * x[(k, col)];
                }
                x[(i, col)] = sum / l[(i, i)];
            }
        }
        x
    }
}
