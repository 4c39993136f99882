use rand::seq::SliceRandom;

use super::vocab::PAD;
use crate::error::{Error, Result};
use crate::seeds;

/// Padded `batch × len` grid of token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    pub ids: Vec<usize>,
    /// `true` for real tokens, `false` for padding.
    pub attention_mask: Vec<bool>,
    pub lengths: Vec<usize>,
    pub batch: usize,
    pub len: usize,
}

impl TokenBatch {
    /// Pads tokenized sequences to the longest one.
    pub fn from_sequences(seqs: &[Vec<usize>], max_len: usize) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let len = seqs.iter().map(Vec::len).max().unwrap_or(0);
        if len > max_len {
            return Err(Error::InvalidArgument(format!(
                "sequence of {len} tokens exceeds max length {max_len}"
            )));
        }
        if seqs.iter().any(Vec::is_empty) {
            return Err(Error::InvalidArgument("empty sequence in batch".into()));
        }
        let batch = seqs.len();
        let mut ids = vec![PAD; batch * len];
        let mut attention_mask = vec![false; batch * len];
        for (b, s) in seqs.iter().enumerate() {
            ids[b * len..b * len + s.len()].copy_from_slice(s);
            attention_mask[b * len..b * len + s.len()].fill(true);
        }
        Ok(TokenBatch {
            ids,
            attention_mask,
            lengths: seqs.iter().map(Vec::len).collect(),
            batch,
            len,
        })
    }

    pub fn n_real_tokens(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// Copy with different ids on the same padding layout.
    pub fn with_ids(&self, ids: Vec<usize>) -> Self {
        debug_assert_eq!(ids.len(), self.ids.len());
        TokenBatch {
            ids,
            ..self.clone()
        }
    }
}

/// Deterministic batch sampler over an endless stream of per-epoch
/// shuffles. The batch for a given step depends only on (seed, step), so
/// batches never straddle partial epochs and resumed runs see the same data.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    n_items: usize,
    batch_size: usize,
    seed: u64,
    cached: Option<(u64, Vec<usize>)>,
}

impl BatchSampler {
    pub fn new(n_items: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if n_items == 0 || batch_size == 0 {
            return Err(Error::InvalidArgument(
                "sampler needs a non-empty corpus and batch_size >= 1".into(),
            ));
        }
        Ok(BatchSampler {
            n_items,
            batch_size,
            seed,
            cached: None,
        })
    }

    fn permutation(&mut self, epoch: u64) -> &[usize] {
        if self.cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut perm: Vec<usize> = (0..self.n_items).collect();
            perm.shuffle(&mut seeds::rng(self.seed, seeds::tag::SHUFFLE, epoch));
            self.cached = Some((epoch, perm));
        }
        &self.cached.as_ref().expect("just filled").1
    }

    /// Item indices for zero-based `step`.
    pub fn indices(&mut self, step: u64) -> Vec<usize> {
        let n = self.n_items as u64;
        let start = step * self.batch_size as u64;
        (start..start + self.batch_size as u64)
            .map(|t| self.permutation(t / n)[(t % n) as usize])
            .collect()
    }
}
