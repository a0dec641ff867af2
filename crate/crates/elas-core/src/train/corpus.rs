//! Byte-level corpus with a deterministic train/eval split and
//! batch sampling that is a pure function of (seed, step).

use crate::error::{ElasError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// A corpus of byte tokens. The first 90% of bytes are the training
/// split, the final 10% the evaluation split; the splits never overlap.
#[derive(Debug, Clone)]
pub struct Corpus {
    train: Vec<u8>,
    eval: Vec<u8>,
}

impl Corpus {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| ElasError::Corpus(format!("{}: {e}", path.display())))?;
        Self::from_bytes(bytes)
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        if bytes.len() < 256 {
            return Err(ElasError::Corpus(format!(
                "corpus too small ({} bytes, need at least 256)",
                bytes.len()
            )));
        }
        let cut = bytes.len() * 9 / 10;
        let eval = bytes[cut..].to_vec();
        let mut train = bytes;
        train.truncate(cut);
        Ok(Corpus { train, eval })
    }

    pub fn train_len(&self) -> usize {
        self.train.len()
    }

    pub fn eval_len(&self) -> usize {
        self.eval.len()
    }

    /// Training batch for a given step: `batch_size` windows of `seq_len`
    /// tokens drawn from the training split. Identical (seed, step) pairs
    /// always produce identical batches.
    pub fn train_batch(
        &self,
        seed: u64,
        step: u64,
        batch_size: usize,
        seq_len: usize,
    ) -> Result<Vec<Vec<usize>>> {
        let span = self.train.len().checked_sub(seq_len).ok_or_else(|| {
            ElasError::Corpus(format!(
                "seq_len {seq_len} exceeds training split of {} bytes",
                self.train.len()
            ))
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        Ok((0..batch_size)
            .map(|_| {
                let start = rng.gen_range(0..=span);
                self.train[start..start + seq_len].iter().map(|&b| b as usize).collect()
            })
            .collect())
    }

    /// Fixed evaluation batch: `count` windows evenly spaced over the
    /// evaluation split. Independent of seed and step.
    pub fn eval_batch(&self, count: usize, seq_len: usize) -> Result<Vec<Vec<usize>>> {
        let span = self.eval.len().checked_sub(seq_len).ok_or_else(|| {
            ElasError::Corpus(format!(
                "seq_len {seq_len} exceeds evaluation split of {} bytes",
                self.eval.len()
            ))
        })?;
        Ok((0..count)
            .map(|i| {
                let start = if count == 1 { 0 } else { span * i / (count - 1) };
                self.eval[start..start + seq_len].iter().map(|&b| b as usize).collect()
            })
            .collect())
    }
}
