//! Causal multi-head attention with low-rank q/k/v/o projections.
//!
//! Attention activations stay dense; only FFN activations are sparsified.

use crate::error::{ElasError, Result};
use crate::numerics::{Matrix, Scalar, SeedStream};

use super::lowrank::{LowRankLinear, LrGrads};

#[derive(Debug, Clone)]
pub struct Attention<T> {
    pub q: LowRankLinear<T>,
    pub k: LowRankLinear<T>,
    pub v: LowRankLinear<T>,
    pub o: LowRankLinear<T>,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttnSaved<T> {
    pub x: Matrix<T>,
    pub bx_q: Matrix<T>,
    pub bx_k: Matrix<T>,
    pub bx_v: Matrix<T>,
    pub q_out: Matrix<T>,
    pub k_out: Matrix<T>,
    pub v_out: Matrix<T>,
    /// Per-head causal softmax probabilities, each seq x seq.
    pub probs: Vec<Matrix<T>>,
    /// Concatenated head outputs before the o-projection.
    pub context: Matrix<T>,
    pub bx_o: Matrix<T>,
}

#[derive(Debug, Clone)]
pub struct AttnGrads<T> {
    pub q: LrGrads<T>,
    pub k: LrGrads<T>,
    pub v: LrGrads<T>,
    pub o: LrGrads<T>,
    pub grad_x: Matrix<T>,
}

impl<T: Scalar> Attention<T> {
    pub fn xavier(d_model: usize, heads: usize, rank: usize, seeds: &mut SeedStream) -> Self {
        assert!(d_model % heads == 0, "d_model must divide into heads");
        Attention {
            q: LowRankLinear::xavier(d_model, d_model, rank, seeds),
            k: LowRankLinear::xavier(d_model, d_model, rank, seeds),
            v: LowRankLinear::xavier(d_model, d_model, rank, seeds),
            o: LowRankLinear::xavier(d_model, d_model, rank, seeds),
            heads: heads,
        }
    }

    pub fn d_model(&self) -> usize {
        self.q.d_out()
    }

    /// x: d_model x seq, causal within the sequence.
    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, AttnSaved<T>)> {
        let d = self.d_model();
        if x.rows() != d {
            return Err(ElasError::ShapeMismatch {
                op: "attention",
                detail: format!("input rows {} != d_model {d}", x.rows()),
            });
        }
        let n = x.cols();
        let dh = d / self.heads;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());

        let (q_out, bx_q) = self.q.forward(x)?;
        let (k_out, bx_k) = self.k.forward(x)?;
        let (v_out, bx_v) = self.v.forward(x)?;

        let mut context = Matrix::zeros(d, n);
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let base = h * dh;
            // scores[t][s] = <q_t, k_s> * scale for s <= t
            let mut p = Matrix::zeros(n, n);
            for t in 0..n {
                let mut max_score = T::neg_infinity();
                let mut scores = vec![T::zero(); t + 1];
                for s in 0..=t {
                    let mut dot = T::zero();
                    for i in 0..dh {
                        dot = dot + q_out[(base + i, t)] * k_out[(base + i, s)];
                    }
                    let sc = dot * scale;
                    scores[s] = sc;
                    if sc > max_score {
                        max_score = sc;
                    }
                }
                let mut denom = T::zero();
                for s in 0..=t {
                    let e = (scores[s] - max_score).exp();
                    scores[s] = e;
                    denom = denom + e;
                }
                for s in 0..=t {
                    p[(t, s)] = scores[s] / denom;
                }
            }
            // context_h[:, t] = sum_s p[t][s] * v[:, s]
            for t in 0..n {
                for s in 0..=t {
                    let w = p[(t, s)];
                    for i in 0..dh {
                        context[(base + i, t)] =
                            context[(base + i, t)] + w * v_out[(base + i, s)];
                    }
                }
            }
            probs.push(p);
        }

        let (y, bx_o) = self.o.forward(&context)?;
        Ok((
            y,
            AttnSaved {
                x: x.clone(),
                bx_q,
                bx_k,
                bx_v,
                q_out,
                k_out,
                v_out,
                probs,
                context,
                bx_o,
            },
        ))
    }

    pub fn backward(&self, saved: &AttnSaved<T>, grad_y: &Matrix<T>) -> Result<AttnGrads<T>> {
        let d = self.d_model();
        let n = saved.x.cols();
        let dh = d / self.heads;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());

        let o = self.o.backward(&saved.context, &saved.bx_o, grad_y)?;
        let grad_ctx = &o.grad_x;

        let mut grad_q = Matrix::zeros(d, n);
        let mut grad_k = Matrix::zeros(d, n);
        let mut grad_v = Matrix::zeros(d, n);
        for h in 0..self.heads {
            let base = h * dh;
            let p = &saved.probs[h];
            for t in 0..n {
                // grad_p[t][s] = <grad_ctx_t, v_s>; softmax row backward
                let mut gp = vec![T::zero(); t + 1];
                let mut inner = T::zero();
                for s in 0..=t {
                    let mut dot = T::zero();
                    for i in 0..dh {
                        dot = dot + grad_ctx[(base + i, t)] * saved.v_out[(base + i, s)];
                    }
                    gp[s] = dot;
                    inner = inner + dot * p[(t, s)];
                }
                for s in 0..=t {
                    let gs = p[(t, s)] * (gp[s] - inner) * scale;
                    // scores[t][s] = <q_t, k_s> * scale
                    for i in 0..dh {
                        grad_q[(base + i, t)] =
                            grad_q[(base + i, t)] + gs * saved.k_out[(base + i, s)];
                        grad_k[(base + i, s)] =
                            grad_k[(base + i, s)] + gs * saved.q_out[(base + i, t)];
                    }
                    // grad_v accumulates p * grad_ctx
                    let w = p[(t, s)];
                    for i in 0..dh {
                        grad_v[(base + i, s)] =
                            grad_v[(base + i, s)] + w * grad_ctx[(base + i, t)];
                    }
                }
            }
        }

        let q = self.q.backward(&saved.x, &saved.bx_q, &grad_q)?;
        let k = self.k.backward(&saved.x, &saved.bx_k, &grad_k)?;
        let v = self.v.backward(&saved.x, &saved.bx_v, &grad_v)?;
        let mut grad_x = q.grad_x.clone();
        grad_x.add_assign(&k.grad_x);
        grad_x.add_assign(&v.grad_x);
        Ok(AttnGrads {
            q,
            k,
            v,
            o,
            grad_x,
        })
    }
}
