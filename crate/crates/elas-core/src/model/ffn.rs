//! Squared-ReLU feed-forward network with optional 2:4 activation sparsity.
//!
//! Forward: `y = down(sparsify(ReLU^2(up(x))))`. The sparsifier only runs
//! when sparsity is enabled; gradients always pass through it unchanged
//! (straight-through estimator).
//!
//! Activation-saving policy: on the sparse path the FFN intermediate is
//! stored packed. Backward reconstructs the ReLU^2 derivative as
//! `2 * sqrt(a)` at kept positions, which equals `2 * max(0, z)` there
//! because `a = z^2 >= 0`; dropped positions receive zero gradient.

use crate::error::{ElasError, Result};
use crate::numerics::{Matrix, Scalar, SeedStream};
use crate::sparsity::{pack, spmm, sparsify, ste_backward, unpack, Packed24Tensor, SparsifierVariant};

use super::lowrank::{LowRankLinear, LrGrads};

/// Elementwise `(max(0, z))^2`.
pub fn relu2_forward<T: Scalar>(z: &Matrix<T>) -> Matrix<T> {
    z.map(|v| {
        let r = v.max(T::zero());
        r * r
    })
}

/// `grad_in = 2 * max(0, z) ⊙ grad_out`; the derivative at z = 0 is 0.
pub fn relu2_backward<T: Scalar>(z: &Matrix<T>, grad_out: &Matrix<T>) -> Matrix<T> {
    let two = T::from_f64(2.0);
    z.zip_map(grad_out, |zv, gv| two * zv.max(T::zero()) * gv)
}

/// FFN with low-rank up/down projections.
#[derive(Debug, Clone)]
pub struct SparseFfn<T> {
    /// d_ff x d_model
    pub up: LowRankLinear<T>,
    /// d_model x d_ff
    pub down: LowRankLinear<T>,
    pub sparsifier: SparsifierVariant,
}

impl<T: Scalar> SparseFfn<T> {
    pub fn xavier(
        d_model: usize,
        d_ff: usize,
        rank: usize,
        sparsifier: SparsifierVariant,
        seeds: &mut SeedStream,
    ) -> Self {
        SparseFfn {
            up: LowRankLinear::xavier(d_ff, d_model, rank, seeds),
            down: LowRankLinear::xavier(d_model, d_ff, rank, seeds),
            sparsifier,
        }
    }

    pub fn d_ff(&self) -> usize {
        self.up.d_out()
    }
}

/// What backward needs, tagged by which path forward took.
#[derive(Debug, Clone)]
pub enum FfnSaved<T> {
    Dense {
        x: Matrix<T>,
        bx_up: Matrix<T>,
        /// Pre-activation, d_ff x n.
        z: Matrix<T>,
        /// ReLU^2 output, d_ff x n.
        a: Matrix<T>,
        bx_down: Matrix<T>,
    },
    Sparse {
        x: Matrix<T>,
        bx_up: Matrix<T>,
        /// Sparsified activation, packed, n x d_ff (sample-major so groups
        /// of 4 run along the feature dimension).
        packed: Packed24Tensor<T>,
        bx_down: Matrix<T>,
        /// Zero fraction of the ReLU^2 output before sparsification.
        natural_zero_fraction: f64,
    },
}

fn zero_fraction<T: Scalar>(a: &Matrix<T>) -> f64 {
    let zeros = a.data().iter().filter(|&&v| v == T::zero()).count();
    zeros as f64 / a.data().len().max(1) as f64
}

impl<T: Scalar> FfnSaved<T> {
    /// Fraction of exact zeros in the post-ReLU^2 activation, measured
    /// before any sparsification.
    pub fn activation_zero_fraction(&self) -> f64 {
        match self {
            FfnSaved::Dense { a, .. } => zero_fraction(a),
            FfnSaved::Sparse {
                natural_zero_fraction,
                ..
            } => *natural_zero_fraction,
        }
    }
}

/// Gradients of one FFN application.
#[derive(Debug, Clone)]
pub struct FfnGrads<T> {
    pub up: LrGrads<T>,
    pub down: LrGrads<T>,
    pub grad_x: Matrix<T>,
    /// On the sparse path: the gradient arriving at the sparsifier output
    /// and the gradient leaving its input, for STE inspection.
    pub ste_trace: Option<SteTrace<T>>,
}

#[derive(Debug, Clone)]
pub struct SteTrace<T> {
    pub grad_into_sparsifier: Matrix<T>,
    pub grad_out_of_sparsifier: Matrix<T>,
}

/// Forward pass. `sparsity_on` selects the packed sparse path.
pub fn ffn_forward<T: Scalar>(
    ffn: &SparseFfn<T>,
    x: &Matrix<T>,
    sparsity_on: bool,
) -> Result<(Matrix<T>, FfnSaved<T>)> {
    let (z, bx_up) = ffn.up.forward(x)?;
    let a = relu2_forward(&z);
    if !sparsity_on {
        let (y, bx_down) = ffn.down.forward(&a)?;
        return Ok((
            y,
            FfnSaved::Dense {
                x: x.clone(),
                bx_up,
                z,
                a,
                bx_down,
            },
        ));
    }
    if ffn.d_ff() % 4 != 0 {
        return Err(ElasError::ShapeMismatch {
            op: "ffn_forward",
            detail: format!("d_ff = {} not divisible by 4 with sparsity on", ffn.d_ff()),
        });
    }
    // Groups of 4 run along features, so sparsify the sample-major transpose.
    let natural_zero_fraction = zero_fraction(&a);
    let a_t = a.transpose();
    let a_sparse_t = sparsify(&a_t, &ffn.sparsifier)?;
    let packed = pack(&a_sparse_t)?;
    // B_down * a_sparse computed through the packed kernel:
    // spmm(a_sparse_t, B_down^T) = (B_down * a_sparse)^T
    let bx_down = spmm(&packed, &ffn.down.b.transpose())?.transpose();
    let y = crate::numerics::matmul(&ffn.down.a, &bx_down)?;
    Ok((
        y,
        FfnSaved::Sparse {
            x: x.clone(),
            bx_up,
            packed,
            bx_down,
            natural_zero_fraction,
        },
    ))
}

/// Backward pass matching `ffn_forward`'s saved state.
pub fn ffn_backward<T: Scalar>(
    ffn: &SparseFfn<T>,
    saved: &FfnSaved<T>,
    grad_y: &Matrix<T>,
) -> Result<FfnGrads<T>> {
    match saved {
        FfnSaved::Dense {
            x,
            bx_up,
            z,
            a,
            bx_down,
        } => {
            let down = ffn.down.backward(a, bx_down, grad_y)?;
            let grad_z = relu2_backward(z, &down.grad_x);
            let up = ffn.up.backward(x, bx_up, &grad_z)?;
            let grad_x = up.grad_x.clone();
            Ok(FfnGrads {
                up,
                down,
                grad_x,
                ste_trace: None,
            })
        }
        FfnSaved::Sparse {
            x,
            bx_up,
            packed,
            bx_down,
            ..
        } => {
            let a_sparse = unpack(packed)?.transpose(); // d_ff x n
            let down = ffn.down.backward(&a_sparse, bx_down, grad_y)?;
            // STE: gradient w.r.t. the pre-sparsify activation is the
            // gradient w.r.t. the sparsified activation, unchanged.
            let grad_a = ste_backward(&down.grad_x);
            // ReLU^2 derivative from the packed surrogate: 2*sqrt(a) on kept
            // positions (a = z^2 there), zero on dropped positions.
            let two = T::from_f64(2.0);
            let grad_z = a_sparse.zip_map(&grad_a, |av, gv| {
                two * av.max(T::zero()).sqrt() * gv
            });
            let up = ffn.up.backward(x, bx_up, &grad_z)?;
            let grad_x = up.grad_x.clone();
            let ste_trace = Some(SteTrace {
                grad_into_sparsifier: down.grad_x.clone(),
                grad_out_of_sparsifier: grad_a,
            });
            Ok(FfnGrads {
                up,
                down,
                grad_x,
                ste_trace,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{matmul, rel_frobenius, xavier_init};
    use crate::sparsity::sparsify_naive;

    #[test]
    fn relu2_pointwise() {
        let z = Matrix::from_rows(&[vec![-1.0f32, 2.0, 0.0]]);
        let a = relu2_forward(&z);
        assert_eq!(a.data(), &[0.0, 4.0, 0.0]);
        assert!(a.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn relu2_natural_sparsity_counts_nonpositive_inputs() {
        let z = xavier_init::<f32>(32, 32, 4);
        let a = relu2_forward(&z);
        let nonpos = z.data().iter().filter(|&&v| v <= 0.0).count();
        let zeros = a.data().iter().filter(|&&v| v == 0.0).count();
        assert_eq!(nonpos, zeros);
    }

    #[test]
    fn relu2_backward_pointwise_and_fd() {
        let z = Matrix::from_rows(&[vec![3.0f64, -2.0, 0.0]]);
        let g = Matrix::from_rows(&[vec![1.0f64, 1.0, 1.0]]);
        let out = relu2_backward(&z, &g);
        assert_eq!(out.data(), &[6.0, 0.0, 0.0]);

        let z = xavier_init::<f64>(5, 5, 6);
        let g = xavier_init::<f64>(5, 5, 7);
        let grad = relu2_backward(&z, &g);
        let h = 1e-6;
        for i in 0..5 {
            for j in 0..5 {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[(i, j)] += h;
                zm[(i, j)] -= h;
                let fd = (relu2_forward(&zp).dot(&g) - relu2_forward(&zm).dot(&g)) / (2.0 * h);
                assert!((fd - grad[(i, j)]).abs() <= 1e-4 * fd.abs().max(1e-3));
            }
        }
    }

    fn test_ffn(seed: u64) -> SparseFfn<f32> {
        let mut seeds = SeedStream::new(seed);
        SparseFfn::xavier(8, 16, 4, SparsifierVariant::naive(), &mut seeds)
    }

    #[test]
    fn dense_path_equals_composition() {
        let ffn = test_ffn(1);
        let x = xavier_init::<f32>(8, 6, 2);
        let (y, _) = ffn_forward(&ffn, &x, false).unwrap();
        let (z, _) = ffn.up.forward(&x).unwrap();
        let (want, _) = ffn.down.forward(&relu2_forward(&z)).unwrap();
        assert_eq!(y, want);
    }

    #[test]
    fn sparse_path_matches_dense_when_already_24() {
        // craft an input whose ReLU^2 output already satisfies 2:4: make the
        // up projection output have two non-positive entries per group
        let mut ffn = test_ffn(3);
        let x = xavier_init::<f32>(8, 4, 5);
        let (z, _) = ffn.up.forward(&x).unwrap();
        // zero out half of each feature group by forcing z <= 0 there
        let mut zmask = z.clone();
        for j in 0..zmask.cols() {
            for g in 0..zmask.rows() / 4 {
                for off in 0..2 {
                    let v = zmask[(g * 4 + off, j)];
                    zmask[(g * 4 + off, j)] = -v.abs();
                }
            }
        }
        // rebuild an ffn whose up layer produces zmask directly: cheat by
        // driving the down layer with the two paths on the same activation
        let a = relu2_forward(&zmask);
        let a_t = a.transpose();
        assert!(crate::sparsity::satisfies_24_pattern(&sparsify_naive(&a_t).unwrap()));
        let (dense_y, _) = ffn.down.forward(&a).unwrap();
        ffn.sparsifier = SparsifierVariant::naive();
        let packed = pack(&sparsify_naive(&a_t).unwrap()).unwrap();
        let bx = spmm(&packed, &ffn.down.b.transpose()).unwrap().transpose();
        let sparse_y = matmul(&ffn.down.a, &bx).unwrap();
        assert!(rel_frobenius(&sparse_y, &dense_y) < 1e-5);
    }

    #[test]
    fn sparse_path_matches_dense_masked_oracle() {
        let ffn = test_ffn(7);
        let x = xavier_init::<f32>(8, 5, 9);
        let (y, saved) = ffn_forward(&ffn, &x, true).unwrap();
        // oracle: dense-masked path
        let (z, _) = ffn.up.forward(&x).unwrap();
        let a_t = relu2_forward(&z).transpose();
        let a_sparse = sparsify_naive(&a_t).unwrap().transpose();
        let (want, _) = ffn.down.forward(&a_sparse).unwrap();
        assert!(rel_frobenius(&y, &want) < 1e-5);
        match saved {
            FfnSaved::Sparse { .. } => {}
            _ => panic!("expected sparse saved state"),
        }
    }

    #[test]
    fn dense_backward_finite_difference() {
        let mut seeds = SeedStream::new(21);
        let ffn = SparseFfn::<f64>::xavier(6, 8, 3, SparsifierVariant::naive(), &mut seeds);
        let x = xavier_init::<f64>(6, 4, 22);
        let gy = xavier_init::<f64>(6, 4, 23);
        let (_, saved) = ffn_forward(&ffn, &x, false).unwrap();
        let grads = ffn_backward(&ffn, &saved, &gy).unwrap();

        let loss = |ffn: &SparseFfn<f64>, x: &Matrix<f64>| {
            ffn_forward(ffn, x, false).unwrap().0.dot(&gy)
        };
        let h = 1e-5;
        let check = |rows: usize,
                     cols: usize,
                     grad: &Matrix<f64>,
                     perturb: &dyn Fn(&mut SparseFfn<f64>, &mut Matrix<f64>, usize, usize, f64)| {
            for i in 0..rows {
                for j in 0..cols {
                    let mut fp = ffn.clone();
                    let mut fm = ffn.clone();
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    perturb(&mut fp, &mut xp, i, j, h);
                    perturb(&mut fm, &mut xm, i, j, -h);
                    let fd = (loss(&fp, &xp) - loss(&fm, &xm)) / (2.0 * h);
                    let an = grad[(i, j)];
                    assert!(
                        (fd - an).abs() <= 1e-4 * fd.abs().max(1.0),
                        "({i},{j}): fd {fd} vs {an}"
                    );
                }
            }
        };
        check(8, 3, &grads.up.grad_a, &|f, _, i, j, d| f.up.a[(i, j)] += d);
        check(3, 6, &grads.up.grad_b, &|f, _, i, j, d| f.up.b[(i, j)] += d);
        check(6, 3, &grads.down.grad_a, &|f, _, i, j, d| f.down.a[(i, j)] += d);
        check(3, 8, &grads.down.grad_b, &|f, _, i, j, d| f.down.b[(i, j)] += d);
        check(6, 4, &grads.grad_x, &|_, x, i, j, d| x[(i, j)] += d);
    }

    #[test]
    fn sparse_backward_ste_is_identity_at_boundary() {
        let ffn = test_ffn(31);
        let x = xavier_init::<f32>(8, 4, 32);
        let gy = xavier_init::<f32>(8, 4, 33);
        let (_, saved) = ffn_forward(&ffn, &x, true).unwrap();
        let grads = ffn_backward(&ffn, &saved, &gy).unwrap();
        let trace = grads.ste_trace.expect("sparse path records the STE trace");
        assert_eq!(trace.grad_into_sparsifier, trace.grad_out_of_sparsifier);
    }

    #[test]
    fn zero_grad_y_zero_grads_both_paths() {
        let ffn = test_ffn(41);
        let x = xavier_init::<f32>(8, 4, 42);
        for sparse in [false, true] {
            let (_, saved) = ffn_forward(&ffn, &x, sparse).unwrap();
            let grads = ffn_backward(&ffn, &saved, &Matrix::zeros(8, 4)).unwrap();
            assert!(grads.up.grad_a.data().iter().all(|&v| v == 0.0));
            assert!(grads.down.grad_b.data().iter().all(|&v| v == 0.0));
            assert!(grads.grad_x.data().iter().all(|&v| v == 0.0));
        }
    }
}
