//! A tiny causal decoder: weight-tied byte embedding, pre-norm blocks with
//! low-rank attention and sparse-FFN sublayers, cross-entropy next-token
//! loss. All forward passes record what the hand-written backward needs.

use crate::error::{ElasError, Result};
use crate::numerics::{matmul, xavier_init, Matrix, Scalar, SeedStream};
use crate::sparsity::{Calibration, SparsifierKind, SparsifierVariant};

use super::attention::{AttnSaved, Attention};
use super::ffn::{ffn_backward, ffn_forward, FfnSaved, SparseFfn, SteTrace};
use super::norm::{NormSaved, RmsNorm};

/// Model dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub r_attn: usize,
    pub r_mlp: usize,
    pub max_seq: usize,
}

#[derive(Debug, Clone)]
pub struct Block<T> {
    pub norm1: RmsNorm<T>,
    pub attn: Attention<T>,
    pub norm2: RmsNorm<T>,
    pub ffn: SparseFfn<T>,
}

#[derive(Debug, Clone)]
pub struct TinyTransformer<T> {
    pub config: ModelConfig,
    /// d_model x vocab; also the tied output head.
    pub embedding: Matrix<T>,
    pub blocks: Vec<Block<T>>,
    pub final_norm: RmsNorm<T>,
}

#[derive(Debug, Clone)]
pub struct BlockSaved<T> {
    pub norm1: NormSaved<T>,
    pub attn: AttnSaved<T>,
    pub norm2: NormSaved<T>,
    pub ffn: FfnSaved<T>,
}

/// Everything backward needs, plus instrumentation counters.
#[derive(Debug, Clone)]
pub struct ModelSaved<T> {
    pub tokens: Vec<usize>,
    pub blocks: Vec<BlockSaved<T>>,
    pub final_norm: NormSaved<T>,
    /// Final normed hidden state, input to the tied head.
    pub h_final: Matrix<T>,
    /// Softmax of the logits, vocab x seq.
    pub probs: Matrix<T>,
    /// Number of sparsifier invocations during this forward.
    pub sparsifier_calls: u64,
}

impl<T: Scalar> ModelSaved<T> {
    /// Mean zero fraction of post-ReLU^2 FFN activations across layers.
    pub fn ffn_natural_sparsity(&self) -> f64 {
        if self.blocks.is_empty() {
            return 0.0;
        }
        self.blocks
            .iter()
            .map(|b| b.ffn.activation_zero_fraction())
            .sum::<f64>()
            / self.blocks.len() as f64
    }
}

/// Output of one forward pass.
pub struct ModelOutput<T> {
    /// vocab x seq.
    pub logits: Matrix<T>,
    /// Mean next-token cross-entropy over the sequence.
    pub loss: f64,
    pub saved: ModelSaved<T>,
}

/// Named gradient tensors, aligned with [`TinyTransformer::param_names`].
pub struct ModelGrads<T> {
    pub tensors: Vec<Matrix<T>>,
    /// Per-layer STE traces when the forward ran the sparse path.
    pub ste_traces: Vec<Option<SteTrace<T>>>,
}

impl<T: Scalar> ModelGrads<T> {
    pub fn zeros_like(model: &TinyTransformer<T>) -> Self {
        ModelGrads {
            tensors: model
                .params()
                .iter()
                .map(|(_, p)| Matrix::zeros(p.rows(), p.cols()))
                .collect(),
            ste_traces: Vec::new(),
        }
    }

    pub fn add_assign(&mut self, other: &ModelGrads<T>) {
        assert_eq!(self.tensors.len(), other.tensors.len());
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors.iter_mut() {
            *t = t.scale(s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.is_finite())
    }
}

impl<T: Scalar> TinyTransformer<T> {
    pub fn new(config: ModelConfig, seed: u64, sparsifier: SparsifierVariant) -> Result<Self> {
        if config.d_model % config.n_heads != 0 {
            return Err(ElasError::Config(format!(
                "d_model {} not divisible by heads {}",
                config.d_model, config.n_heads
            )));
        }
        let mut seeds = SeedStream::new(seed);
        let embedding = xavier_init(config.d_model, config.vocab, seeds.next_seed());
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                norm1: RmsNorm::ones(config.d_model),
                attn: Attention::xavier(config.d_model, config.n_heads, config.r_attn, &mut seeds),
                norm2: RmsNorm::ones(config.d_model),
                ffn: SparseFfn::xavier(
                    config.d_model,
                    config.d_ff,
                    config.r_mlp,
                    sparsifier.clone(),
                    &mut seeds,
                ),
            })
            .collect();
        Ok(TinyTransformer {
            final_norm: RmsNorm::ones(config.d_model),
            config,
            embedding,
            blocks,
        })
    }

    /// Canonical parameter order used by the optimizer and checkpoints.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["embedding".to_string()];
        for i in 0..self.blocks.len() {
            names.push(format!("layer{i}.norm1.gain"));
            for proj in ["q", "k", "v", "o"] {
                names.push(format!("layer{i}.attn.{proj}.a"));
                names.push(format!("layer{i}.attn.{proj}.b"));
            }
            names.push(format!("layer{i}.norm2.gain"));
            names.push(format!("layer{i}.ffn.up.a"));
            names.push(format!("layer{i}.ffn.up.b"));
            names.push(format!("layer{i}.ffn.down.a"));
            names.push(format!("layer{i}.ffn.down.b"));
        }
        names.push("final_norm.gain".to_string());
        names
    }

    pub fn params(&self) -> Vec<(String, &Matrix<T>)> {
        let names = self.param_names();
        let mut tensors: Vec<&Matrix<T>> = vec![&self.embedding];
        for b in &self.blocks {
            tensors.push(&b.norm1.gain);
            for lr in [&b.attn.q, &b.attn.k, &b.attn.v, &b.attn.o] {
                tensors.push(&lr.a);
                tensors.push(&lr.b);
            }
            tensors.push(&b.norm2.gain);
            tensors.push(&b.ffn.up.a);
            tensors.push(&b.ffn.up.b);
            tensors.push(&b.ffn.down.a);
            tensors.push(&b.ffn.down.b);
        }
        tensors.push(&self.final_norm.gain);
        names.into_iter().zip(tensors).collect()
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Matrix<T>)> {
        let names = self.param_names();
        let mut tensors: Vec<&mut Matrix<T>> = vec![&mut self.embedding];
        for b in self.blocks.iter_mut() {
            tensors.push(&mut b.norm1.gain);
            for lr in [&mut b.attn.q, &mut b.attn.k, &mut b.attn.v, &mut b.attn.o] {
                tensors.push(&mut lr.a);
                tensors.push(&mut lr.b);
            }
            tensors.push(&mut b.norm2.gain);
            tensors.push(&mut b.ffn.up.a);
            tensors.push(&mut b.ffn.up.b);
            tensors.push(&mut b.ffn.down.a);
            tensors.push(&mut b.ffn.down.b);
        }
        tensors.push(&mut self.final_norm.gain);
        names.into_iter().zip(tensors).collect()
    }

    /// Name prefixes of every low-rank factor pair, for the exact refresh.
    pub fn lowrank_prefixes(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.blocks.len() {
            for proj in ["q", "k", "v", "o"] {
                out.push(format!("layer{i}.attn.{proj}"));
            }
            out.push(format!("layer{i}.ffn.up"));
            out.push(format!("layer{i}.ffn.down"));
        }
        out
    }

    pub fn lowrank_layer_mut(&mut self, prefix: &str) -> Option<&mut super::lowrank::LowRankLinear<T>> {
        let rest = prefix.strip_prefix("layer")?;
        let dot = rest.find('.')?;
        let idx: usize = rest[..dot].parse().ok()?;
        let block = self.blocks.get_mut(idx)?;
        match &rest[dot + 1..] {
            "attn.q" => Some(&mut block.attn.q),
            "attn.k" => Some(&mut block.attn.k),
            "attn.v" => Some(&mut block.attn.v),
            "attn.o" => Some(&mut block.attn.o),
            "ffn.up" => Some(&mut block.ffn.up),
            "ffn.down" => Some(&mut block.ffn.down),
            _ => None,
        }
    }

    /// Causal LM forward over one token sequence.
    pub fn forward(&self, tokens: &[usize], sparsity_on: bool) -> Result<ModelOutput<T>> {
        let cfg = &self.config;
        if tokens.is_empty() || tokens.len() > cfg.max_seq {
            return Err(ElasError::Config(format!(
                "sequence length {} out of range 1..={}",
                tokens.len(),
                cfg.max_seq
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= cfg.vocab) {
            return Err(ElasError::Config(format!(
                "token id {bad} out of range for vocab {}",
                cfg.vocab
            )));
        }
        let n = tokens.len();
        let mut h = Matrix::zeros(cfg.d_model, n);
        for (t, &tok) in tokens.iter().enumerate() {
            for i in 0..cfg.d_model {
                h[(i, t)] = self.embedding[(i, tok)];
            }
        }

        let mut blocks_saved = Vec::with_capacity(self.blocks.len());
        let mut sparsifier_calls = 0u64;
        for block in &self.blocks {
            let (n1, n1_saved) = block.norm1.forward(&h);
            let (attn_out, attn_saved) = block.attn.forward(&n1)?;
            h.add_assign(&attn_out);
            let (n2, n2_saved) = block.norm2.forward(&h);
            let (ffn_out, ffn_saved) = ffn_forward(&block.ffn, &n2, sparsity_on)?;
            if matches!(ffn_saved, FfnSaved::Sparse { .. }) {
                sparsifier_calls += 1;
            }
            h.add_assign(&ffn_out);
            blocks_saved.push(BlockSaved {
                norm1: n1_saved,
                attn: attn_saved,
                norm2: n2_saved,
                ffn: ffn_saved,
            });
        }
        let (h_final, final_saved) = self.final_norm.forward(&h);
        let logits = matmul(&self.embedding.transpose(), &h_final)?;

        // softmax columns + next-token cross-entropy
        let mut probs = Matrix::zeros(cfg.vocab, n);
        for t in 0..n {
            let mut maxv = T::neg_infinity();
            for c in 0..cfg.vocab {
                if logits[(c, t)] > maxv {
                    maxv = logits[(c, t)];
                }
            }
            let mut denom = T::zero();
            for c in 0..cfg.vocab {
                let e = (logits[(c, t)] - maxv).exp();
                probs[(c, t)] = e;
                denom = denom + e;
            }
            for c in 0..cfg.vocab {
                probs[(c, t)] = probs[(c, t)] / denom;
            }
        }
        let mut loss = 0.0f64;
        if n > 1 {
            for t in 0..n - 1 {
                let target = tokens[t + 1];
                loss -= probs[(target, t)].to_f64().max(1e-300).ln();
            }
            loss /= (n - 1) as f64;
        }

        Ok(ModelOutput {
            logits,
            loss,
            saved: ModelSaved {
                tokens: tokens.to_vec(),
                blocks: blocks_saved,
                final_norm: final_saved,
                h_final,
                probs,
                sparsifier_calls,
            },
        })
    }

    /// Backward pass for the mean cross-entropy loss of `forward`.
    pub fn backward(&self, saved: &ModelSaved<T>) -> Result<ModelGrads<T>> {
        let cfg = &self.config;
        let n = saved.tokens.len();
        let mut grad_logits = Matrix::zeros(cfg.vocab, n);
        if n > 1 {
            let inv = T::from_f64(1.0 / (n - 1) as f64);
            for t in 0..n - 1 {
                let target = saved.tokens[t + 1];
                for c in 0..cfg.vocab {
                    let indicator = if c == target { T::one() } else { T::zero() };
                    grad_logits[(c, t)] = (saved.probs[(c, t)] - indicator) * inv;
                }
            }
        }

        // tied head: logits = E^T h_final
        let mut grad_embedding = matmul(&saved.h_final, &grad_logits.transpose())?;
        let grad_h_final = matmul(&self.embedding, &grad_logits)?;
        let final_grads = self.final_norm.backward(&saved.final_norm, &grad_h_final);
        let mut grad_h = final_grads.grad_x;

        let mut block_grads = Vec::with_capacity(self.blocks.len());
        let mut ste_traces = Vec::with_capacity(self.blocks.len());
        for (block, bsaved) in self.blocks.iter().zip(&saved.blocks).rev() {
            let ffn_grads = ffn_backward(&block.ffn, &bsaved.ffn, &grad_h)?;
            let n2_grads = block.norm2.backward(&bsaved.norm2, &ffn_grads.grad_x);
            grad_h.add_assign(&n2_grads.grad_x);
            let attn_grads = block.attn.backward(&bsaved.attn, &grad_h)?;
            let n1_grads = block.norm1.backward(&bsaved.norm1, &attn_grads.grad_x);
            grad_h.add_assign(&n1_grads.grad_x);
            ste_traces.push(ffn_grads.ste_trace.clone());
            block_grads.push((n1_grads, attn_grads, n2_grads, ffn_grads));
        }
        block_grads.reverse();
        ste_traces.reverse();

        // embedding lookup gradient
        for (t, &tok) in saved.tokens.iter().enumerate() {
            for i in 0..cfg.d_model {
                grad_embedding[(i, tok)] = grad_embedding[(i, tok)] + grad_h[(i, t)];
            }
        }

        let mut tensors = vec![grad_embedding];
        for (n1, attn, n2, ffn) in block_grads {
            tensors.push(n1.grad_gain);
            for lr in [attn.q, attn.k, attn.v, attn.o] {
                tensors.push(lr.grad_a);
                tensors.push(lr.grad_b);
            }
            tensors.push(n2.grad_gain);
            tensors.push(ffn.up.grad_a);
            tensors.push(ffn.up.grad_b);
            tensors.push(ffn.down.grad_a);
            tensors.push(ffn.down.grad_b);
        }
        tensors.push(final_grads.grad_gain);
        Ok(ModelGrads {
            tensors,
            ste_traces,
        })
    }

    /// Fit soft-activation scales on a calibration batch of sequences using
    /// the dense forward path. One scale per layer.
    pub fn calibrate_soft_activation(
        &mut self,
        batch: &[Vec<usize>],
    ) -> Result<Vec<Calibration>> {
        if self.blocks.is_empty()
            || self.blocks[0].ffn.sparsifier.kind != SparsifierKind::SoftActivation
        {
            return Err(ElasError::Config(
                "calibration only applies to the soft_activation sparsifier".into(),
            ));
        }
        let n_layers = self.blocks.len();
        let d_ff = self.config.d_ff;
        // gather sample-major activation rows per layer
        let mut rows: Vec<Vec<Vec<T>>> = vec![Vec::new(); n_layers];
        for tokens in batch {
            let out = self.forward(tokens, false)?;
            for (li, bsaved) in out.saved.blocks.iter().enumerate() {
                if let FfnSaved::Dense { a, .. } = &bsaved.ffn {
                    for t in 0..a.cols() {
                        rows[li].push((0..d_ff).map(|i| a[(i, t)]).collect());
                    }
                }
            }
        }
        let mut cals = Vec::with_capacity(n_layers);
        for (li, layer_rows) in rows.into_iter().enumerate() {
            let batch_matrix = Matrix::from_rows(&layer_rows);
            let cal = self.blocks[li].ffn.sparsifier.calibrate(&batch_matrix)?;
            cals.push(cal);
        }
        Ok(cals)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(vocab: usize) -> ModelConfig {
        ModelConfig {
            vocab,
            d_model: 16,
            n_heads: 2,
            n_layers: 2,
            d_ff: 16,
            r_attn: 4,
            r_mlp: 4,
            max_seq: 16,
        }
    }

    #[test]
    fn single_token_vocab_loss_is_zero() {
        let model =
            TinyTransformer::<f32>::new(tiny_config(1), 0, SparsifierVariant::naive()).unwrap();
        let out = model.forward(&[0, 0, 0, 0], false).unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn logits_shape_and_untrained_loss_near_log_vocab() {
        let vocab = 64;
        let model =
            TinyTransformer::<f32>::new(tiny_config(vocab), 3, SparsifierVariant::naive()).unwrap();
        let tokens: Vec<usize> = (0..16).map(|i| (i * 37 + 11) % vocab).collect();
        let out = model.forward(&tokens, false).unwrap();
        assert_eq!(out.logits.rows(), vocab);
        assert_eq!(out.logits.cols(), 16);
        let uniform = (vocab as f64).ln();
        assert!(
            (out.loss - uniform).abs() < 0.1 * uniform,
            "loss {} vs ln(vocab) {uniform}",
            out.loss
        );
    }

    #[test]
    fn out_of_range_tokens_rejected() {
        let model =
            TinyTransformer::<f32>::new(tiny_config(8), 1, SparsifierVariant::naive()).unwrap();
        assert!(model.forward(&[1, 9], false).is_err());
        assert!(model.forward(&[], false).is_err());
    }

    #[test]
    fn sparsifier_call_count() {
        let model =
            TinyTransformer::<f32>::new(tiny_config(8), 2, SparsifierVariant::naive()).unwrap();
        let out = model.forward(&[1, 2, 3, 4], false).unwrap();
        assert_eq!(out.saved.sparsifier_calls, 0);
        let out = model.forward(&[1, 2, 3, 4], true).unwrap();
        assert_eq!(out.saved.sparsifier_calls, 2);
    }

    #[test]
    fn param_names_align_with_tensors() {
        let mut model =
            TinyTransformer::<f32>::new(tiny_config(8), 4, SparsifierVariant::naive()).unwrap();
        let names = model.param_names();
        assert_eq!(names.len(), model.params().len());
        assert_eq!(names.len(), model.params_mut().len());
        assert_eq!(names[0], "embedding");
        assert!(names.contains(&"layer1.ffn.down.b".to_string()));
        for prefix in model.lowrank_prefixes() {
            assert!(model.lowrank_layer_mut(&prefix).is_some(), "{prefix}");
        }
    }

    #[test]
    fn full_model_gradient_check_f64() {
        // d=16, r=4, 2 layers, seq=8, sparsity off
        let config = tiny_config(11);
        let model =
            TinyTransformer::<f64>::new(config, 7, SparsifierVariant::naive()).unwrap();
        let tokens = vec![1usize, 5, 3, 9, 0, 2, 10, 4];
        let out = model.forward(&tokens, false).unwrap();
        let grads = model.backward(&out.saved).unwrap();

        let h = 1e-5;
        let names = model.param_names();
        for (pi, name) in names.iter().enumerate() {
            let grad = &grads.tensors[pi];
            // subsample large tensors to keep the test quick
            let stride = 1 + grad.data().len() / 24;
            for flat in (0..grad.data().len()).step_by(stride) {
                let i = flat / grad.cols();
                let j = flat % grad.cols();
                let mut mp = model.clone();
                mp.params_mut()[pi].1[(i, j)] += h;
                let lp = mp.forward(&tokens, false).unwrap().loss;
                let mut mm = model.clone();
                mm.params_mut()[pi].1[(i, j)] -= h;
                let lm = mm.forward(&tokens, false).unwrap().loss;
                let fd = (lp - lm) / (2.0 * h);
                let an = grad[(i, j)];
                assert!(
                    (fd - an).abs() <= 1e-3 * fd.abs().max(1e-3),
                    "{name}({i},{j}): fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn ste_property_under_sparsity() {
        let model =
            TinyTransformer::<f32>::new(tiny_config(8), 9, SparsifierVariant::naive()).unwrap();
        let out = model.forward(&[1, 2, 3, 4, 5, 6, 7, 0], true).unwrap();
        let grads = model.backward(&out.saved).unwrap();
        assert_eq!(grads.ste_traces.len(), 2);
        for trace in grads.ste_traces.iter() {
            let trace = trace.as_ref().expect("sparse path records traces");
            assert_eq!(trace.grad_into_sparsifier, trace.grad_out_of_sparsifier);
        }
    }

    #[test]
    fn sparse_and_dense_losses_agree_when_pattern_holds() {
        // zero two of every four up-projection output rows so the ReLU^2
        // activation already satisfies the 2:4 pattern; then the sparsifier
        // is a no-op and both paths must agree
        let mut model =
            TinyTransformer::<f32>::new(tiny_config(8), 10, SparsifierVariant::naive()).unwrap();
        for block in model.blocks.iter_mut() {
            let a = &mut block.ffn.up.a;
            for g in 0..a.rows() / 4 {
                for off in 0..2 {
                    for c in 0..a.cols() {
                        a[(g * 4 + off, c)] = 0.0;
                    }
                }
            }
        }
        let tokens = [1usize, 2, 3, 4, 5, 6, 7, 0];
        let dense = model.forward(&tokens, false).unwrap();
        let sparse = model.forward(&tokens, true).unwrap();
        assert!(sparse.saved.sparsifier_calls > 0);
        assert!(
            (dense.loss - sparse.loss).abs() <= 1e-5 * dense.loss.max(1.0),
            "dense {} vs sparse {}",
            dense.loss,
            sparse.loss
        );
    }
}
