//! Deterministic pseudo-random language model: logits are hashed from
//! `(seed, context, token)` and softmaxed. Useful as a reproducible fuzzing
//! oracle with full-support distributions.

use crate::tokenizer::{TokenId, Vocabulary};

use super::{LanguageModel, LmError};

#[derive(Debug, Clone)]
pub struct HashLm {
    vocab: Vocabulary,
    seed: u64,
    max_len: usize,
    /// Spread of the logits; larger values make distributions peakier.
    pub logit_scale: f64,
}

impl HashLm {
    pub fn new(vocab: Vocabulary, seed: u64, max_len: usize) -> Self {
        HashLm {
            vocab,
            seed,
            max_len,
            logit_scale: 4.0,
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

impl LanguageModel for HashLm {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<Vec<f64>, LmError> {
        if prefix.len() >= self.max_len {
            return Err(LmError::PrefixTooLong {
                len: prefix.len(),
                max: self.max_len,
            });
        }
        let mut ctx = splitmix(self.seed);
        for &t in prefix {
            ctx = splitmix(ctx ^ u64::from(t).wrapping_mul(0x100000001b3));
        }
        let k = self.vocab.len();
        let mut weights = Vec::with_capacity(k);
        let mut sum = 0.0;
        for t in 0..k as u64 {
            let h = splitmix(ctx ^ splitmix(t));
            // Map to (0, 1], then exponentiate for softmax-like spread.
            let unit = (h >> 11) as f64 / (1u64 << 53) as f64;
            let w = (self.logit_scale * unit).exp();
            weights.push(w);
            sum += w;
        }
        for w in &mut weights {
            *w /= sum;
        }
        Ok(weights)
    }
}
