//! Optimizer loop: per-factor Adam on most steps, periodic exact SVD
//! rebalancing of each low-rank factor pair with a moment reset.

use crate::error::{ElasError, Result};
use crate::model::{LowRankLinear, ModelGrads, TinyTransformer};
use crate::numerics::{matmul, rel_frobenius, svd, Matrix, Scalar};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Relative product drift the exact refresh must stay under.
pub const REFRESH_PRODUCT_TOL: f64 = 1e-5;

/// First/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub hyper: AdamHyper,
    pub f_refresh: u64,
    pub step: u64,
    /// Aligned with the model's canonical parameter order.
    pub moments: Vec<MomentPair<T>>,
}

#[derive(Debug, Clone)]
pub struct MomentPair<T> {
    pub m: Matrix<T>,
    pub v: Matrix<T>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(model: &TinyTransformer<T>, hyper: AdamHyper, f_refresh: u64) -> Self {
        let moments = model
            .params()
            .iter()
            .map(|(_, p)| MomentPair {
                m: Matrix::zeros(p.rows(), p.cols()),
                v: Matrix::zeros(p.rows(), p.cols()),
            })
            .collect();
        OptimizerState {
            hyper,
            f_refresh,
            step: 0,
            moments,
        }
    }

    /// One Adam step over every parameter. Aborts before mutating anything
    /// when the gradients contain NaN/Inf; the caller decides the policy.
    pub fn step_approx(
        &mut self,
        model: &mut TinyTransformer<T>,
        grads: &ModelGrads<T>,
        lr: f64,
    ) -> Result<()> {
        if !grads.all_finite() {
            return Err(ElasError::NonFinite { op: "step_approx" });
        }
        self.step += 1;
        let t = self.step as i32;
        let h = self.hyper;
        let b1 = T::from_f64(h.beta1);
        let b2 = T::from_f64(h.beta2);
        let one = T::one();
        let eps = T::from_f64(h.eps);
        let bias1 = T::from_f64(1.0 - h.beta1.powi(t));
        let bias2 = T::from_f64(1.0 - h.beta2.powi(t));
        let lr_t = T::from_f64(lr);
        let wd = T::from_f64(h.weight_decay);

        let params = model.params_mut();
        assert_eq!(params.len(), self.moments.len());
        assert_eq!(params.len(), grads.tensors.len());
        for ((_, param), (mom, grad)) in params
            .into_iter()
            .zip(self.moments.iter_mut().zip(&grads.tensors))
        {
            let p = param.data_mut();
            let m = mom.m.data_mut();
            let v = mom.v.data_mut();
            let g = grad.data();
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                let mut update = m_hat / (v_hat.sqrt() + eps);
                if h.weight_decay != 0.0 {
                    update = update + wd * p[i];
                }
                p[i] = p[i] - lr_t * update;
            }
        }
        Ok(())
    }

    /// Exact refresh of one factor pair: SVD of `A*B` truncated to rank r,
    /// balanced sqrt(S) split, and a moment reset for the two factors.
    /// Preserves the product within [`REFRESH_PRODUCT_TOL`].
    pub fn step_exact_refresh(&mut self, layer: &mut LowRankLinear<T>) -> Result<()> {
        let rank = layer.rank();
        let product = matmul(&layer.a, &layer.b)?;
        let decomp = svd(&product)?.truncate(rank);
        let mut a = decomp.u;
        let mut b = decomp.vt;
        for j in 0..rank {
            let root = T::from_f64(decomp.s[j].to_f64().max(0.0).sqrt());
            for i in 0..a.rows() {
                a[(i, j)] = a[(i, j)] * root;
            }
            for i in 0..b.cols() {
                b[(j, i)] = b[(j, i)] * root;
            }
        }
        let refreshed = matmul(&a, &b)?;
        let drift = rel_frobenius(&refreshed, &product);
        if drift > REFRESH_PRODUCT_TOL {
            return Err(ElasError::SvdNonConvergence {
                sweeps: 0,
                off: drift,
            });
        }
        layer.a = a;
        layer.b = b;
        Ok(())
    }

    /// Refresh every low-rank factor pair in the model and zero the
    /// corresponding moment accumulators. SVD failures skip that layer and
    /// are reported back; training continues.
    pub fn refresh_model(&mut self, model: &mut TinyTransformer<T>) -> Vec<(String, ElasError)> {
        let mut failures = Vec::new();
        let names = model.param_names();
        for prefix in model.lowrank_prefixes() {
            let layer = model
                .lowrank_layer_mut(&prefix)
                .expect("prefix enumerated from the model");
            match self.step_exact_refresh(layer) {
                Ok(()) => {
                    for suffix in [".a", ".b"] {
                        let name = format!("{prefix}{suffix}");
                        let idx = names
                            .iter()
                            .position(|n| *n == name)
                            .expect("factor name exists");
                        let mom = &mut self.moments[idx];
                        mom.m = Matrix::zeros(mom.m.rows(), mom.m.cols());
                        mom.v = Matrix::zeros(mom.v.rows(), mom.v.cols());
                    }
                }
                Err(e) => failures.push((prefix, e)),
            }
        }
        failures
    }
}

/// Linear warmup over the first 10% of steps, then cosine decay to `min_lr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub warmup_frac: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, min_lr: f64) -> Self {
        LrSchedule {
            base_lr,
            min_lr,
            warmup_frac: 0.1,
        }
    }

    pub fn lr_at(&self, step: u64, total: u64) -> f64 {
        assert!(step <= total, "step {step} past total {total}");
        let warmup = ((total as f64 * self.warmup_frac).round() as u64).max(1);
        if step < warmup {
            return self.base_lr * step as f64 / warmup as f64;
        }
        let progress = (step - warmup) as f64 / (total - warmup).max(1) as f64;
        self.min_lr
            + 0.5 * (self.base_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
