//! Flat key=value training configuration with CLI overrides.

use crate::error::{ElasError, Result};
use crate::model::ModelConfig;
use crate::sparsity::SparsifierKind;
use std::collections::BTreeMap;
use std::path::Path;

/// Everything one training run needs. Parsed from a UTF-8 key=value file
/// with `#` comments; overrides win over file values; the `ELAS_SEED`
/// environment variable seeds runs that set the seed nowhere else.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub layers: usize,
    pub vocab: usize,
    pub seq_len: usize,
    pub r_attn: usize,
    pub r_mlp: usize,
    pub n_warmup: u64,
    pub n_total: u64,
    pub f_refresh: u64,
    pub batch_size: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub sparsifier: SparsifierKind,
    pub seed: u64,
    pub corpus: String,
    pub checkpoint_path: String,
    pub metrics_path: String,
    pub eval_interval: u64,
    pub eval_sequences: usize,
    pub checkpoint_every: u64,
    /// When false the ms_per_step column is written as 0 so metrics files
    /// are byte-identical across reruns.
    pub record_timing: bool,
}

impl Default for TrainConfig {
    /// Desk-scale preset: 2 layers, d_model 64, d_ff 256, rank 16.
    fn default() -> Self {
        TrainConfig {
            d_model: 64,
            d_ff: 256,
            heads: 4,
            layers: 2,
            vocab: 256,
            seq_len: 64,
            r_attn: 16,
            r_mlp: 16,
            n_warmup: 200,
            n_total: 2000,
            f_refresh: 500,
            batch_size: 4,
            base_lr: 2e-3,
            min_lr: 2e-4,
            sparsifier: SparsifierKind::Naive,
            seed: 0,
            corpus: "data/corpus.txt".to_string(),
            checkpoint_path: "out/model.elas".to_string(),
            metrics_path: "out/metrics.csv".to_string(),
            eval_interval: 100,
            eval_sequences: 16,
            checkpoint_every: 0,
            record_timing: false,
        }
    }
}

impl TrainConfig {
    pub fn from_file(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, overrides)
    }

    pub fn from_text(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                ElasError::Config(format!("line {}: expected key=value", lineno + 1))
            })?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut cfg = Self::default();
        if !kv.contains_key("seed") && !overrides.iter().any(|(k, _)| k == "seed") {
            if let Ok(env_seed) = std::env::var("ELAS_SEED") {
                cfg.seed = env_seed
                    .parse()
                    .map_err(|_| ElasError::Config(format!("bad ELAS_SEED '{env_seed}'")))?;
            }
        }
        for (k, v) in kv.iter() {
            cfg.set(k, v)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| ElasError::Config(format!("bad value '{value}' for {what}"));
        macro_rules! num {
            ($field:ident) => {
                self.$field = value.parse().map_err(|_| bad(key))?
            };
        }
        match key {
            "d_model" => num!(d_model),
            "d_ff" => num!(d_ff),
            "heads" => num!(heads),
            "layers" => num!(layers),
            "vocab" => num!(vocab),
            "seq_len" => num!(seq_len),
            "r_attn" => num!(r_attn),
            "r_mlp" => num!(r_mlp),
            "n_warmup" => num!(n_warmup),
            "n_total" => num!(n_total),
            "f_refresh" => num!(f_refresh),
            "batch_size" => num!(batch_size),
            "base_lr" => num!(base_lr),
            "min_lr" => num!(min_lr),
            "seed" => num!(seed),
            "eval_interval" => num!(eval_interval),
            "eval_sequences" => num!(eval_sequences),
            "checkpoint_every" => num!(checkpoint_every),
            "sparsifier" => self.sparsifier = SparsifierKind::parse(value)?,
            "corpus" => self.corpus = value.to_string(),
            "checkpoint_path" => self.checkpoint_path = value.to_string(),
            "metrics_path" => self.metrics_path = value.to_string(),
            "record_timing" => {
                self.record_timing = value.parse().map_err(|_| bad(key))?;
            }
            other => return Err(ElasError::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_warmup > self.n_total {
            return Err(ElasError::Config(format!(
                "n_warmup {} exceeds n_total {}",
                self.n_warmup, self.n_total
            )));
        }
        if self.d_ff % 4 != 0 {
            return Err(ElasError::Config(format!(
                "d_ff {} must be divisible by 4 when a sparsifier is active",
                self.d_ff
            )));
        }
        if self.d_model % self.heads != 0 {
            return Err(ElasError::Config(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.seq_len < 2 {
            return Err(ElasError::Config("seq_len must be at least 2".into()));
        }
        if self.batch_size == 0 || self.eval_sequences == 0 {
            return Err(ElasError::Config("batch/eval sizes must be positive".into()));
        }
        if self.eval_interval == 0 {
            return Err(ElasError::Config("eval_interval must be positive".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            vocab: self.vocab,
            d_model: self.d_model,
            n_heads: self.heads,
            n_layers: self.layers,
            d_ff: self.d_ff,
            r_attn: self.r_attn,
            r_mlp: self.r_mlp,
            max_seq: self.seq_len,
        }
    }

    /// Canonical serialization, stable key order; embedded in checkpoints.
    pub fn to_text(&self) -> String {
        format!(
            "base_lr={}\nbatch_size={}\ncheckpoint_every={}\ncheckpoint_path={}\ncorpus={}\n\
             d_ff={}\nd_model={}\neval_interval={}\neval_sequences={}\nf_refresh={}\nheads={}\n\
             layers={}\nmetrics_path={}\nmin_lr={}\nn_total={}\nn_warmup={}\nr_attn={}\nr_mlp={}\n\
             record_timing={}\nseed={}\nseq_len={}\nsparsifier={}\nvocab={}\n",
            self.base_lr,
            self.batch_size,
            self.checkpoint_every,
            self.checkpoint_path,
            self.corpus,
            self.d_ff,
            self.d_model,
            self.eval_interval,
            self.eval_sequences,
            self.f_refresh,
            self.heads,
            self.layers,
            self.metrics_path,
            self.min_lr,
            self.n_total,
            self.n_warmup,
            self.r_attn,
            self.r_mlp,
            self.record_timing,
            self.seed,
            self.seq_len,
            self.sparsifier.name(),
            self.vocab,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_with_comments_and_overrides() {
        let text = "# desk preset\nn_total = 500\nbase_lr = 0.001 # peak\n";
        let cfg = TrainConfig::from_text(text, &[("n_warmup".into(), "50".into())]).unwrap();
        assert_eq!(cfg.n_total, 500);
        assert_eq!(cfg.n_warmup, 50);
        assert_eq!(cfg.base_lr, 1e-3);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(TrainConfig::from_text("n_warmup=10\nn_total=5\n", &[]).is_err());
        assert!(TrainConfig::from_text("d_ff=130\n", &[]).is_err());
        assert!(TrainConfig::from_text("mystery=1\n", &[]).is_err());
        assert!(TrainConfig::from_text("n_total\n", &[]).is_err());
    }

    #[test]
    fn round_trips_through_canonical_text() {
        let mut cfg = TrainConfig::default();
        cfg.sparsifier = SparsifierKind::SoftWeights;
        cfg.seed = 99;
        let text = cfg.to_text();
        let back = TrainConfig::from_text(&text, &[]).unwrap();
        assert_eq!(cfg, back);
    }
}
