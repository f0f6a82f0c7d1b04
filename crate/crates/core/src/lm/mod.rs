//! The pluggable autoregressive language-model abstraction, the decision
//! rules that turn its probabilities into language membership, and two
//! desk-scale reference models.

mod hash;
mod ngram;

pub use hash::HashLm;
pub use ngram::NGramLm;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::tokenizer::{TokenId, Vocabulary};

#[derive(Debug, Error)]
pub enum LmError {
    #[error("prefix length {len} reaches the model's max sequence length {max}")]
    PrefixTooLong { len: usize, max: usize },
    #[error("malformed model file at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Next-token distribution oracle. Implementations must be pure functions of
/// `(model, prefix)` and safe for concurrent callers.
pub trait LanguageModel: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    /// Maximum context length; `next_distribution` rejects longer prefixes.
    fn max_len(&self) -> usize;

    fn eos(&self) -> TokenId {
        self.vocab().eos()
    }

    /// Probability vector over all tokens given the prefix. Entries are
    /// nonnegative and sum to 1 within 1e-9.
    fn next_distribution(&self, prefix: &[TokenId]) -> Result<Vec<f64>, LmError>;
}

/// Decoding-time decision rule restricting which tokens keep a string inside
/// the model's language.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionRule {
    /// Accept any token with positive probability.
    None,
    /// Accept only the k most likely tokens at each step, ties broken by
    /// lower token id.
    TopK(usize),
}

/// The admissible token set under a rule, sorted by token id. `TopK(k)`
/// returns exactly `min(k, #positive)` ids; zero-probability tokens are
/// never admissible.
pub fn apply_rule(dist: &[f64], rule: DecisionRule) -> Vec<TokenId> {
    match rule {
        DecisionRule::None => dist
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| i as TokenId)
            .collect(),
        DecisionRule::TopK(k) => {
            let mut ids: Vec<TokenId> = (0..dist.len() as TokenId)
                .filter(|&t| dist[t as usize] > 0.0)
                .collect();
            // Highest probability first, ties by lower id.
            ids.sort_by(|&a, &b| {
                dist[b as usize]
                    .partial_cmp(&dist[a as usize])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            ids.truncate(k);
            ids.sort_unstable();
            ids
        }
    }
}

/// Binary search membership in the sorted id set from [`apply_rule`].
pub fn rule_admits(admissible: &[TokenId], token: TokenId) -> bool {
    admissible.binary_search(&token).is_ok()
}

/// Outcome of scoring a fixed token sequence under a rule.
#[derive(Debug, Clone, PartialEq)]
pub enum SequenceScore {
    Scored {
        log_prob: f64,
        /// Per-step probability of each token given its context.
        step_probs: Vec<f64>,
    },
    /// Some post-prefix step used a token outside the admissible set (or a
    /// zero-probability token anywhere, which has no finite cost).
    Rejected { step: usize },
}

impl SequenceScore {
    pub fn log_prob(&self) -> Option<f64> {
        match self {
            SequenceScore::Scored { log_prob, .. } => Some(*log_prob),
            SequenceScore::Rejected { .. } => None,
        }
    }
}

/// Sum of per-step log probabilities of `tokens`. Steps with index below
/// `prefix_len` bypass the decision rule but still contribute their true
/// log probability to the total.
pub fn sequence_log_prob(
    model: &dyn LanguageModel,
    tokens: &[TokenId],
    rule: DecisionRule,
    prefix_len: usize,
) -> Result<SequenceScore, LmError> {
    let mut total = 0.0;
    let mut step_probs = Vec::with_capacity(tokens.len());
    for (i, &t) in tokens.iter().enumerate() {
        let dist = model.next_distribution(&tokens[..i])?;
        let p = dist.get(t as usize).copied().unwrap_or(0.0);
        if p <= 0.0 {
            return Ok(SequenceScore::Rejected { step: i });
        }
        if i >= prefix_len && !rule_admits(&apply_rule(&dist, rule), t) {
            return Ok(SequenceScore::Rejected { step: i });
        }
        total += p.ln();
        step_probs.push(p);
    }
    Ok(SequenceScore::Scored {
        log_prob: total,
        step_probs,
    })
}

/// Wrapper counting distribution calls, for harness efficiency reports.
pub struct CountingLm<M> {
    inner: M,
    calls: Arc<AtomicU64>,
}

impl<M: LanguageModel> CountingLm<M> {
    pub fn new(inner: M) -> Self {
        CountingLm {
            inner,
            calls: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn counter(&self) -> Arc<AtomicU64> {
        Arc::clone(&self.calls)
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<M: LanguageModel> LanguageModel for CountingLm<M> {
    fn vocab(&self) -> &Vocabulary {
        self.inner.vocab()
    }

    fn max_len(&self) -> usize {
        self.inner.max_len()
    }

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<Vec<f64>, LmError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.next_distribution(prefix)
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for &M {
    fn vocab(&self) -> &Vocabulary {
        (**self).vocab()
    }

    fn max_len(&self) -> usize {
        (**self).max_len()
    }

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<Vec<f64>, LmError> {
        (**self).next_distribution(prefix)
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for Arc<M> {
    fn vocab(&self) -> &Vocabulary {
        (**self).vocab()
    }

    fn max_len(&self) -> usize {
        (**self).max_len()
    }

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<Vec<f64>, LmError> {
        (**self).next_distribution(prefix)
    }
}
