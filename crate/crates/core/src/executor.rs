//! Traversals over the product of a token automaton and a language model:
//! best-first (highest probability first) shortest path and unbiased random
//! sampling with walk-count-normalized prefix selection.
//!
//! A traversal node is a token path plus its position in the prefix or
//! suffix automaton. Costs are `-log p` summed per step, so Dijkstra order
//! is probability order. Prefix-region steps bypass the decision rule but
//! still pay their true cost (a zero-cost prefix mode exists behind
//! [`ExecOptions::prefix_zero_cost`] for comparison runs).

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Arc;

use num_bigint::{BigUint, RandBigInt};
use num_traits::Zero;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;
use thiserror::Error;

use crate::automaton::{StateId, WalkCountTable};
use crate::compiler::TokenAutomaton;
use crate::lm::{apply_rule, rule_admits, DecisionRule, LanguageModel, LmError};
use crate::preprocess::DeferredFilter;
use crate::tokenizer::TokenId;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("frontier exceeded {cap} nodes")]
    FrontierCap { cap: usize },
    #[error("sampling hit {discarded} dead ends within a {budget}-retry budget")]
    RetryBudget { budget: usize, discarded: u64 },
    #[error("every candidate was rejected by the decision rule")]
    AllCandidatesRejected,
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("sampling requires walk counts covering the prefix automaton")]
    MissingWalkCounts,
    #[error(transparent)]
    Lm(#[from] LmError),
}

/// One accepted token sequence with its decoded text and scoring metadata.
#[derive(Debug, Clone, Serialize)]
pub struct MatchResult {
    pub tokens: Vec<TokenId>,
    /// Decoded bytes of the full sequence (EOS decodes to nothing).
    #[serde(serialize_with = "serialize_text")]
    pub text: Vec<u8>,
    /// Sum of per-step log probabilities over `tokens`.
    pub logprob: f64,
    /// True when each region of the path is its decoded text's canonical
    /// encoding (for queries without a prefix this is plain canonicality).
    pub canonical: bool,
    /// Edit-expansion level consumed by this match; 0 means the text is in
    /// the original, unexpanded query language. Set by the query layer.
    pub n_edits: u32,
    pub step_probs: Vec<f64>,
    /// How many leading tokens belong to the prefix region.
    #[serde(skip)]
    pub prefix_token_len: usize,
    /// Decoded byte length of the prefix region.
    #[serde(skip)]
    pub prefix_byte_len: usize,
}

fn serialize_text<S: serde::Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&String::from_utf8_lossy(bytes))
}

impl MatchResult {
    pub fn text_string(&self) -> String {
        String::from_utf8_lossy(&self.text).into_owned()
    }

    pub fn suffix_tokens(&self) -> &[TokenId] {
        &self.tokens[self.prefix_token_len..]
    }

    pub fn prefix_tokens(&self) -> &[TokenId] {
        &self.tokens[..self.prefix_token_len]
    }
}

/// Edge-weighting scheme for the prefix region of random sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleWeighting {
    /// Weight each edge by the number of accepting walks through it, giving
    /// a uniform distribution over prefix strings.
    WalkNormalized,
    /// Uniform over outgoing edges; biased toward short strings and early
    /// branches. Kept for comparison experiments.
    UniformEdges,
}

#[derive(Debug, Clone)]
pub struct ExecOptions {
    pub rule: DecisionRule,
    /// Maximum results to emit; `usize::MAX` streams until exhaustion.
    pub limit: usize,
    /// Token budget per result.
    pub max_tokens: usize,
    pub frontier_cap: usize,
    /// Treat prefix-region steps as free instead of their true cost.
    pub prefix_zero_cost: bool,
    /// Let EOS bypass the decision rule at stop decisions while sampling.
    pub exempt_eos: bool,
    /// Dead-end retries allowed per emitted sample.
    pub retry_budget: usize,
    pub weighting: SampleWeighting,
    /// Wall-clock bound; the stream ends cleanly once it passes.
    pub deadline: Option<std::time::Instant>,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            rule: DecisionRule::None,
            limit: usize::MAX,
            max_tokens: crate::DEFAULT_MAX_TOKENS,
            frontier_cap: 1_000_000,
            prefix_zero_cost: false,
            exempt_eos: false,
            retry_budget: 16,
            weighting: SampleWeighting::WalkNormalized,
            deadline: None,
        }
    }
}

/// Completion-time predicates from deferred filters, split by region.
#[derive(Default)]
pub struct CompletionFilters {
    pub prefix_deny: Vec<DeferredFilter>,
    pub suffix_deny: Vec<DeferredFilter>,
}

/// Counters exposed by traversals for harness reports.
#[derive(Debug, Default)]
pub struct TraversalStats {
    pub dead_ends: AtomicU64,
    pub non_canonical_discards: AtomicU64,
    pub filtered_discards: AtomicU64,
    pub lm_calls: AtomicU64,
}

impl TraversalStats {
    pub fn dead_ends(&self) -> u64 {
        self.dead_ends.load(AtomicOrdering::Relaxed)
    }
    pub fn discarded(&self) -> u64 {
        self.dead_ends() + self.non_canonical() + self.filtered()
    }
    pub fn non_canonical(&self) -> u64 {
        self.non_canonical_discards.load(AtomicOrdering::Relaxed)
    }
    pub fn filtered(&self) -> u64 {
        self.filtered_discards.load(AtomicOrdering::Relaxed)
    }
    pub fn lm_calls(&self) -> u64 {
        self.lm_calls.load(AtomicOrdering::Relaxed)
    }
}

/// Distribution memo per traversal, keyed by the token path.
struct DistCache {
    map: HashMap<Vec<TokenId>, Arc<Vec<f64>>>,
    cap: usize,
    stats: Arc<TraversalStats>,
}

impl DistCache {
    fn new(stats: Arc<TraversalStats>) -> Self {
        DistCache {
            map: HashMap::new(),
            cap: 1 << 16,
            stats,
        }
    }

    fn get(
        &mut self,
        model: &dyn LanguageModel,
        tokens: &[TokenId],
    ) -> Result<Arc<Vec<f64>>, LmError> {
        if let Some(d) = self.map.get(tokens) {
            return Ok(Arc::clone(d));
        }
        self.stats.lm_calls.fetch_add(1, AtomicOrdering::Relaxed);
        let dist = Arc::new(model.next_distribution(tokens)?);
        if self.map.len() < self.cap {
            self.map.insert(tokens.to_vec(), Arc::clone(&dist));
        }
        Ok(dist)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Place {
    Prefix(StateId),
    Suffix(StateId),
}

#[derive(Debug, Clone)]
struct Node {
    cost: f64,
    tokens: Vec<TokenId>,
    step_probs: Vec<f64>,
    place: Place,
    prefix_len: usize,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // Reversed so BinaryHeap pops the cheapest node: cost, then shorter
    // path, then lexicographic tokens.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.tokens.len().cmp(&self.tokens.len()))
            .then_with(|| other.tokens.cmp(&self.tokens))
            .then_with(|| other.place.cmp(&self.place))
    }
}

/// Best-first traversal emitting matches in nondecreasing cost
/// (nonincreasing probability) order, without duplicates.
pub struct ShortestPathIter<'a> {
    prefix: Option<Arc<TokenAutomaton>>,
    suffix: Arc<TokenAutomaton>,
    model: &'a dyn LanguageModel,
    opts: ExecOptions,
    filters: CompletionFilters,
    heap: BinaryHeap<Node>,
    emitted: usize,
    emitted_paths: HashSet<Vec<TokenId>>,
    last_cost: f64,
    cache: DistCache,
    stats: Arc<TraversalStats>,
    done: bool,
}

pub fn shortest_path<'a>(
    prefix: Option<Arc<TokenAutomaton>>,
    suffix: Arc<TokenAutomaton>,
    model: &'a dyn LanguageModel,
    opts: ExecOptions,
    filters: CompletionFilters,
) -> ShortestPathIter<'a> {
    let stats = Arc::new(TraversalStats::default());
    let mut heap = BinaryHeap::new();
    let done = opts.limit == 0;
    if !done {
        let place = match &prefix {
            Some(p) => Place::Prefix(p.automaton.initial()),
            None => Place::Suffix(suffix.automaton.initial()),
        };
        heap.push(Node {
            cost: 0.0,
            tokens: vec![],
            step_probs: vec![],
            place,
            prefix_len: 0,
        });
    }
    ShortestPathIter {
        prefix,
        suffix,
        model,
        opts,
        filters,
        heap,
        emitted: 0,
        emitted_paths: HashSet::new(),
        last_cost: 0.0,
        cache: DistCache::new(Arc::clone(&stats)),
        stats,
        done,
    }
}

impl<'a> ShortestPathIter<'a> {
    pub fn stats(&self) -> Arc<TraversalStats> {
        Arc::clone(&self.stats)
    }

    fn node_accepts(&self, node: &Node) -> bool {
        match node.place {
            Place::Prefix(q) => {
                self.prefix.as_ref().is_some_and(|p| p.automaton.is_final(q))
                    && self
                        .suffix
                        .automaton
                        .is_final(self.suffix.automaton.initial())
            }
            Place::Suffix(s) => self.suffix.automaton.is_final(s),
        }
    }

    /// Canonicality and deferred-filter checks at completion time. Returns
    /// `None` when the node passes, otherwise which counter to bump.
    fn completion_discard(&self, node: &Node) -> Option<&'static str> {
        let vocab = self.model.vocab();
        let (prefix_part, suffix_part) = node.tokens.split_at(node.prefix_len);
        let check_canonical = |part: &[TokenId], required: bool| -> Option<bool> {
            let stripped: Vec<TokenId> = part
                .iter()
                .copied()
                .filter(|&t| t != vocab.eos())
                .collect();
            let decoded = vocab.decode(&stripped).ok()?;
            let canonical = vocab.encode(&decoded) == stripped;
            Some(!required || canonical)
        };
        let prefix_required = self
            .prefix
            .as_ref()
            .is_some_and(|p| p.mode.needs_runtime_canonical_check());
        let suffix_required = self.suffix.mode.needs_runtime_canonical_check();
        if check_canonical(prefix_part, prefix_required) != Some(true)
            || check_canonical(suffix_part, suffix_required) != Some(true)
        {
            return Some("canonical");
        }
        let decode = |part: &[TokenId]| vocab.decode(part).unwrap_or_default();
        if !self.filters.prefix_deny.is_empty() {
            let text = decode(prefix_part);
            if self.filters.prefix_deny.iter().any(|f| f.rejects(&text)) {
                return Some("filtered");
            }
        }
        if !self.filters.suffix_deny.is_empty() {
            let text = decode(suffix_part);
            if self.filters.suffix_deny.iter().any(|f| f.rejects(&text)) {
                return Some("filtered");
            }
        }
        None
    }

    fn expand(&mut self, node: &Node) -> Result<(), ExecError> {
        if node.tokens.len() >= self.opts.max_tokens
            || node.tokens.len() >= self.model.max_len()
        {
            return Ok(());
        }
        let dist = self.cache.get(self.model, &node.tokens)?;
        let prefix = self.prefix.clone();
        let suffix = Arc::clone(&self.suffix);
        let rule = self.opts.rule;
        let prefix_zero_cost = self.opts.prefix_zero_cost;
        let mut admissible: Option<Vec<TokenId>> = None;
        match node.place {
            Place::Prefix(q) => {
                let prefix = prefix.expect("prefix node without prefix automaton");
                for &(sym, t) in prefix.automaton.edges_from(q) {
                    // Prefix edges bypass the decision rule.
                    push_child(
                        &mut self.heap,
                        node,
                        sym,
                        dist[sym as usize],
                        Place::Prefix(t),
                        true,
                        prefix_zero_cost,
                    );
                }
                if prefix.automaton.is_final(q) {
                    let s0 = suffix.automaton.initial();
                    let rule_set =
                        admissible.get_or_insert_with(|| apply_rule(&dist, rule));
                    for &(sym, t) in suffix.automaton.edges_from(s0) {
                        if rule_admits(rule_set, sym) {
                            push_child(
                                &mut self.heap,
                                node,
                                sym,
                                dist[sym as usize],
                                Place::Suffix(t),
                                false,
                                prefix_zero_cost,
                            );
                        }
                    }
                }
            }
            Place::Suffix(s) => {
                let rule_set = admissible.get_or_insert_with(|| apply_rule(&dist, rule));
                for &(sym, t) in suffix.automaton.edges_from(s) {
                    if rule_admits(rule_set, sym) {
                        push_child(
                            &mut self.heap,
                            node,
                            sym,
                            dist[sym as usize],
                            Place::Suffix(t),
                            false,
                            prefix_zero_cost,
                        );
                    }
                }
            }
        }
        if self.heap.len() > self.opts.frontier_cap {
            return Err(ExecError::FrontierCap {
                cap: self.opts.frontier_cap,
            });
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn push_child(
    heap: &mut BinaryHeap<Node>,
    node: &Node,
    token: TokenId,
    p: f64,
    place: Place,
    in_prefix: bool,
    prefix_zero_cost: bool,
) {
    if p <= 0.0 {
        return;
    }
    let step_cost = if in_prefix && prefix_zero_cost {
        0.0
    } else {
        -p.ln()
    };
    let mut tokens = node.tokens.clone();
    tokens.push(token);
    let mut step_probs = node.step_probs.clone();
    step_probs.push(p);
    let prefix_len = if in_prefix {
        tokens.len()
    } else {
        node.prefix_len
    };
    heap.push(Node {
        cost: node.cost + step_cost,
        tokens,
        step_probs,
        place,
        prefix_len,
    });
}

impl<'a> Iterator for ShortestPathIter<'a> {
    type Item = Result<MatchResult, ExecError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done || self.emitted >= self.opts.limit {
            return None;
        }
        while let Some(node) = self.heap.pop() {
            if let Some(deadline) = self.opts.deadline {
                if std::time::Instant::now() >= deadline {
                    self.done = true;
                    return None;
                }
            }
            debug_assert!(node.cost >= self.last_cost - 1e-9, "cost order violated");
            self.last_cost = node.cost;
            if let Err(e) = self.expand(&node) {
                self.done = true;
                return Some(Err(e));
            }
            if !self.node_accepts(&node) {
                continue;
            }
            if !self.emitted_paths.insert(node.tokens.clone()) {
                continue;
            }
            match self.completion_discard(&node) {
                Some("canonical") => {
                    self.stats
                        .non_canonical_discards
                        .fetch_add(1, AtomicOrdering::Relaxed);
                    continue;
                }
                Some(_) => {
                    self.stats
                        .filtered_discards
                        .fetch_add(1, AtomicOrdering::Relaxed);
                    continue;
                }
                None => {}
            }
            let model: &dyn LanguageModel = self.model;
            let vocab = model.vocab();
            let text = match vocab.decode(&node.tokens) {
                Ok(t) => t,
                Err(_) => continue,
            };
            let prefix_byte_len = vocab
                .decode(&node.tokens[..node.prefix_len])
                .map(|b| b.len())
                .unwrap_or(0);
            let canonical = regions_canonical(vocab, &node.tokens, node.prefix_len);
            let logprob = -node.cost_true(self);
            self.emitted += 1;
            return Some(Ok(MatchResult {
                logprob,
                tokens: node.tokens,
                text,
                canonical,
                n_edits: 0,
                step_probs: node.step_probs,
                prefix_token_len: node.prefix_len,
                prefix_byte_len,
            }));
        }
        None
    }
}

impl Node {
    /// True log probability regardless of the zero-cost prefix option.
    fn cost_true(&self, iter: &ShortestPathIter<'_>) -> f64 {
        if iter.opts.prefix_zero_cost {
            -self.step_probs.iter().map(|p| p.ln()).sum::<f64>()
        } else {
            self.cost
        }
    }
}

/// Per-region canonicality of a token path (EOS tokens ignored).
pub fn regions_canonical(
    vocab: &crate::tokenizer::Vocabulary,
    tokens: &[TokenId],
    prefix_len: usize,
) -> bool {
    let check = |part: &[TokenId]| {
        let stripped: Vec<TokenId> = part.iter().copied().filter(|&t| t != vocab.eos()).collect();
        match vocab.decode(&stripped) {
            Ok(decoded) => vocab.encode(&decoded) == stripped,
            Err(_) => false,
        }
    };
    check(&tokens[..prefix_len]) && check(&tokens[prefix_len..])
}

/// Unbiased random sampling: the prefix region is drawn edge-by-edge with
/// walk-count weights (uniform over prefix strings), the suffix is drawn
/// from the model restricted to automaton-admissible tokens under the rule,
/// and proper-prefix strings are disambiguated by drawing EOS. The stream
/// resamples forever, up to `opts.limit`.
pub struct RandomSampler<'a> {
    prefix: Option<Arc<TokenAutomaton>>,
    walk_counts: Option<Arc<WalkCountTable>>,
    suffix: Arc<TokenAutomaton>,
    model: &'a dyn LanguageModel,
    opts: ExecOptions,
    filters: CompletionFilters,
    rng: StdRng,
    emitted: usize,
    cache: DistCache,
    stats: Arc<TraversalStats>,
    done: bool,
}

pub fn random_sample<'a>(
    prefix: Option<Arc<TokenAutomaton>>,
    walk_counts: Option<Arc<WalkCountTable>>,
    suffix: Arc<TokenAutomaton>,
    model: &'a dyn LanguageModel,
    opts: ExecOptions,
    filters: CompletionFilters,
    seed: u64,
) -> RandomSampler<'a> {
    let stats = Arc::new(TraversalStats::default());
    RandomSampler {
        prefix,
        walk_counts,
        suffix,
        model,
        opts,
        filters,
        rng: StdRng::seed_from_u64(seed),
        emitted: 0,
        cache: DistCache::new(Arc::clone(&stats)),
        stats,
        done: false,
    }
}

enum Attempt {
    Sample(Node),
    DeadEnd,
}

impl<'a> RandomSampler<'a> {
    pub fn stats(&self) -> Arc<TraversalStats> {
        Arc::clone(&self.stats)
    }

    fn sample_prefix_walk(&mut self, tokens: &mut Vec<TokenId>) -> Result<bool, ExecError> {
        let Some(prefix) = self.prefix.clone() else {
            return Ok(true);
        };
        let a = &prefix.automaton;
        let wc = match self.opts.weighting {
            SampleWeighting::WalkNormalized => {
                Some(self.walk_counts.clone().ok_or(ExecError::MissingWalkCounts)?)
            }
            SampleWeighting::UniformEdges => self.walk_counts.clone(),
        };
        let mut q = a.initial();
        let n_max = wc.as_ref().map_or(self.opts.max_tokens, |w| w.n_max());
        let mut remaining = n_max;
        loop {
            let stoppable = a.is_final(q);
            match self.opts.weighting {
                SampleWeighting::WalkNormalized => {
                    let wc = wc.as_ref().expect("checked above");
                    let mut weights: Vec<(Option<(TokenId, StateId)>, BigUint)> = Vec::new();
                    if stoppable {
                        weights.push((None, BigUint::from(1u32)));
                    }
                    if remaining > 0 {
                        for &(sym, t) in a.edges_from(q) {
                            let w = wc.total_up_to(t, remaining - 1).clone();
                            if !w.is_zero() {
                                weights.push((Some((sym, t)), w));
                            }
                        }
                    }
                    let total: BigUint = weights.iter().map(|(_, w)| w.clone()).sum();
                    if total.is_zero() {
                        return Ok(false);
                    }
                    let mut draw = self.rng.gen_biguint_below(&total);
                    let mut chosen = None;
                    for (option, w) in &weights {
                        if draw < *w {
                            chosen = Some(*option);
                            break;
                        }
                        draw -= w;
                    }
                    match chosen.expect("draw below total always lands") {
                        None => return Ok(true),
                        Some((sym, t)) => {
                            tokens.push(sym);
                            q = t;
                            remaining -= 1;
                        }
                    }
                }
                SampleWeighting::UniformEdges => {
                    let edges = a.edges_from(q);
                    let option_count = edges.len() + usize::from(stoppable);
                    if option_count == 0 || remaining == 0 {
                        return Ok(stoppable);
                    }
                    let pick = self.rng.gen_range(0..option_count);
                    if stoppable && pick == 0 {
                        return Ok(true);
                    }
                    let (sym, t) = edges[pick - usize::from(stoppable)];
                    tokens.push(sym);
                    q = t;
                    remaining -= 1;
                }
            }
        }
    }

    /// One suffix attempt by rejection: each step draws a token from the
    /// model under the decision rule (ordinary top-k-style sampling), and
    /// the whole sample is discarded if the draw leaves the automaton.
    /// Rejection keeps accepted samples distributed exactly as the model's
    /// conditional over the automaton's language; local renormalization
    /// onto automaton edges would not.
    fn attempt(&mut self) -> Result<Attempt, ExecError> {
        let mut tokens: Vec<TokenId> = Vec::new();
        if !self.sample_prefix_walk(&mut tokens)? {
            return Ok(Attempt::DeadEnd);
        }
        let prefix_len = tokens.len();
        let eos = self.model.eos();
        let mut s = self.suffix.automaton.initial();
        loop {
            let at_final = self.suffix.automaton.is_final(s);
            // A final state with no way forward is unambiguous: emit
            // without consulting the model.
            if at_final && self.suffix.automaton.edges_from(s).is_empty() {
                break;
            }
            let budget_left =
                tokens.len() < self.opts.max_tokens && tokens.len() < self.model.max_len();
            if !budget_left {
                if at_final {
                    break;
                }
                return Ok(Attempt::DeadEnd);
            }
            let dist = self.cache.get(self.model, &tokens)?;
            let mut support = apply_rule(&dist, self.opts.rule);
            if self.opts.exempt_eos
                && at_final
                && dist.get(eos as usize).copied().unwrap_or(0.0) > 0.0
            {
                if let Err(i) = support.binary_search(&eos) {
                    support.insert(i, eos);
                }
            }
            let total: f64 = support.iter().map(|&t| dist[t as usize]).sum();
            if support.is_empty() || total <= 0.0 {
                return Ok(Attempt::DeadEnd);
            }
            let mut draw = self.rng.gen_range(0.0..total);
            let mut chosen = *support.last().unwrap();
            for &t in &support {
                let p = dist[t as usize];
                if draw < p {
                    chosen = t;
                    break;
                }
                draw -= p;
            }
            match self.suffix.automaton.step(s, chosen) {
                // Automaton edges win, including explicit EOS edges of
                // terminated queries.
                Some(next) => {
                    tokens.push(chosen);
                    s = next;
                }
                None if chosen == eos && at_final => break,
                // The model left the query language: reject the sample.
                None => return Ok(Attempt::DeadEnd),
            }
        }
        // Score the assembled path; suffix steps came from the admissible
        // set and prefix steps are exempt, so this cannot reject.
        let mut cost = 0.0;
        let mut step_probs = Vec::with_capacity(tokens.len());
        for i in 0..tokens.len() {
            let dist = self.cache.get(self.model, &tokens[..i])?;
            let p = dist[tokens[i] as usize];
            step_probs.push(p);
            cost += -p.ln();
        }
        Ok(Attempt::Sample(Node {
            cost,
            tokens,
            step_probs,
            place: Place::Suffix(s),
            prefix_len,
        }))
    }
}

impl<'a> Iterator for RandomSampler<'a> {
    type Item = Result<MatchResult, ExecError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done || self.emitted >= self.opts.limit {
            return None;
        }
        let mut retries = 0u64;
        loop {
            if let Some(deadline) = self.opts.deadline {
                if std::time::Instant::now() >= deadline {
                    self.done = true;
                    return None;
                }
            }
            if retries > self.opts.retry_budget as u64 {
                self.done = true;
                return Some(Err(ExecError::RetryBudget {
                    budget: self.opts.retry_budget,
                    discarded: retries,
                }));
            }
            let node = match self.attempt() {
                Ok(Attempt::Sample(node)) => node,
                Ok(Attempt::DeadEnd) => {
                    self.stats.dead_ends.fetch_add(1, AtomicOrdering::Relaxed);
                    retries += 1;
                    continue;
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            };
            let model: &dyn LanguageModel = self.model;
            let vocab = model.vocab();
            let canonical = regions_canonical(vocab, &node.tokens, node.prefix_len);
            let canonical_required = self.suffix.mode.needs_runtime_canonical_check()
                || self
                    .prefix
                    .as_ref()
                    .is_some_and(|p| p.mode.needs_runtime_canonical_check());
            if canonical_required && !canonical {
                self.stats
                    .non_canonical_discards
                    .fetch_add(1, AtomicOrdering::Relaxed);
                retries += 1;
                continue;
            }
            let (prefix_part, suffix_part) = node.tokens.split_at(node.prefix_len);
            let prefix_text = vocab.decode(prefix_part).unwrap_or_default();
            let suffix_text = vocab.decode(suffix_part).unwrap_or_default();
            if self
                .filters
                .prefix_deny
                .iter()
                .any(|f| f.rejects(&prefix_text))
                || self
                    .filters
                    .suffix_deny
                    .iter()
                    .any(|f| f.rejects(&suffix_text))
            {
                self.stats
                    .filtered_discards
                    .fetch_add(1, AtomicOrdering::Relaxed);
                retries += 1;
                continue;
            }
            let prefix_byte_len = prefix_text.len();
            let mut text = prefix_text;
            text.extend_from_slice(&suffix_text);
            self.emitted += 1;
            return Some(Ok(MatchResult {
                logprob: -node.cost,
                tokens: node.tokens,
                text,
                canonical,
                n_edits: 0,
                step_probs: node.step_probs,
                prefix_token_len: node.prefix_len,
                prefix_byte_len,
            }));
        }
    }
}

/// Renormalized probabilities of each candidate continuation given the
/// prefix, under the rule. Rejected candidates get probability zero.
pub fn conditional_probability(
    model: &dyn LanguageModel,
    prefix: &[TokenId],
    candidates: &[Vec<TokenId>],
    rule: DecisionRule,
) -> Result<Vec<f64>, ExecError> {
    if candidates.is_empty() {
        return Err(ExecError::EmptyCandidates);
    }
    let mut log_probs: Vec<Option<f64>> = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let mut full = prefix.to_vec();
        full.extend_from_slice(cand);
        let score = crate::lm::sequence_log_prob(&model, &full, rule, prefix.len())?;
        log_probs.push(score.log_prob());
    }
    let max = log_probs
        .iter()
        .flatten()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if max == f64::NEG_INFINITY {
        return Err(ExecError::AllCandidatesRejected);
    }
    let weights: Vec<f64> = log_probs
        .iter()
        .map(|lp| lp.map_or(0.0, |lp| (lp - max).exp()))
        .collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::{compile_canonical, compile_full, CanonicalStrategy};
    use crate::lm::NGramLm;
    use crate::regex::{compile_to_automaton, parse, CompileOptions};
    use crate::tokenizer::Vocabulary;
    use crate::DEFAULT_STATE_CAP;

    fn byte_automaton(pattern: &str) -> crate::automaton::Automaton {
        compile_to_automaton(&parse(pattern).unwrap(), &CompileOptions::default()).unwrap()
    }

    fn canonical_ta(pattern: &str, vocab: &Vocabulary) -> TokenAutomaton {
        compile_canonical(
            &byte_automaton(pattern),
            vocab,
            CanonicalStrategy::Enumerate,
            100_000,
            DEFAULT_STATE_CAP,
        )
        .unwrap()
    }

    #[test]
    fn two_candidate_ranking_matches_brute_force() {
        let vocab = Vocabulary::byte_level();
        let lm = NGramLm::train(
            vocab.clone(),
            "The cat\nThe cat\nThe cat\nThe dog",
            3,
            0.1,
        );
        let prefix = Arc::new(canonical_ta("The ", &vocab));
        let suffix = Arc::new(canonical_ta("(cat)|(dog)", &vocab));
        let results: Vec<MatchResult> = shortest_path(
            Some(prefix),
            suffix,
            &lm,
            ExecOptions::default(),
            CompletionFilters::default(),
        )
        .map(|r| r.unwrap())
        .collect();
        assert_eq!(results.len(), 2);
        assert_eq!(results[0].text_string(), "The cat");
        assert_eq!(results[1].text_string(), "The dog");
        assert!(results[0].logprob >= results[1].logprob);
        // Brute-force scoring agrees.
        for r in &results {
            let score =
                crate::lm::sequence_log_prob(&lm, &r.tokens, DecisionRule::None, 0).unwrap();
            assert!((score.log_prob().unwrap() - r.logprob).abs() < 1e-9);
        }
    }

    #[test]
    fn greedy_rule_equals_brute_force_filter() {
        let vocab = Vocabulary::byte_level();
        let lm = NGramLm::train(vocab.clone(), "ab\naa\nba", 2, 0.05);
        let pattern = "(a|b)(a|b)";
        let suffix = Arc::new(canonical_ta(pattern, &vocab));
        let opts = ExecOptions {
            rule: DecisionRule::TopK(1),
            ..ExecOptions::default()
        };
        let emitted: Vec<String> = shortest_path(
            None,
            suffix,
            &lm,
            opts,
            CompletionFilters::default(),
        )
        .map(|r| r.unwrap().text_string())
        .collect();
        // Brute force: enumerate the language, keep strings whose every
        // step is the greedy token.
        let mut expected = Vec::new();
        for s in ["aa", "ab", "ba", "bb"] {
            let tokens = vocab.encode(s.as_bytes());
            let score =
                crate::lm::sequence_log_prob(&lm, &tokens, DecisionRule::TopK(1), 0).unwrap();
            if score.log_prob().is_some() {
                expected.push(s.to_string());
            }
        }
        let mut emitted_sorted = emitted.clone();
        emitted_sorted.sort();
        expected.sort();
        assert_eq!(emitted_sorted, expected);
    }

    #[test]
    fn costs_are_nondecreasing_and_paths_unique() {
        let vocab = Vocabulary::byte_level();
        let lm = NGramLm::train(vocab.clone(), "abc\nacb\nbac", 2, 0.2);
        let suffix = Arc::new(canonical_ta("[abc]{1,3}", &vocab));
        let mut last = f64::NEG_INFINITY;
        let mut seen = std::collections::HashSet::new();
        for r in shortest_path(
            None,
            suffix,
            &lm,
            ExecOptions::default(),
            CompletionFilters::default(),
        ) {
            let r = r.unwrap();
            let cost = -r.logprob;
            assert!(cost >= last - 1e-12);
            last = cost;
            assert!(seen.insert(r.tokens.clone()), "duplicate {:?}", r.tokens);
        }
        assert_eq!(seen.len(), 3 + 9 + 27);
    }

    #[test]
    fn limit_zero_makes_no_model_calls() {
        let vocab = Vocabulary::byte_level();
        let lm = NGramLm::train(vocab.clone(), "x", 2, 0.1);
        let suffix = Arc::new(canonical_ta("a", &vocab));
        let opts = ExecOptions {
            limit: 0,
            ..ExecOptions::default()
        };
        let iter = shortest_path(None, suffix, &lm, opts, CompletionFilters::default());
        let stats = iter.stats();
        assert_eq!(iter.count(), 0);
        assert_eq!(stats.lm_calls(), 0);
    }

    #[test]
    fn singleton_language_sampling_is_constant() {
        let vocab = Vocabulary::byte_level();
        let lm = NGramLm::train(vocab.clone(), "hi\nhi\nhi\nhi", 2, 0.001);
        let suffix = Arc::new(canonical_ta("hi", &vocab));
        let opts = ExecOptions {
            limit: 20,
            retry_budget: 200,
            ..ExecOptions::default()
        };
        let texts: Vec<String> = random_sample(
            None,
            None,
            suffix,
            &lm,
            opts,
            CompletionFilters::default(),
            42,
        )
        .map(|r| r.unwrap().text_string())
        .collect();
        assert_eq!(texts.len(), 20);
        assert!(texts.iter().all(|t| t == "hi"));
    }

    #[test]
    fn naive_first_edge_bias_on_paper_language() {
        // {a, b, bb, bbb}: uniform edge choice picks 'a' half the time.
        let vocab = Vocabulary::byte_level();
        let lm = NGramLm::train(vocab.clone(), "a\nb\nbb\nbbb", 2, 0.1);
        let prefix_auto = byte_automaton("(a)|(b)|(bb)|(bbb)");
        let prefix = Arc::new(compile_full(&prefix_auto, &vocab, DEFAULT_STATE_CAP).unwrap());
        let wc = Arc::new(prefix.automaton.count_walks(64));
        let suffix = Arc::new(canonical_ta("", &vocab));
        let run = |weighting: SampleWeighting, n: usize| -> f64 {
            let opts = ExecOptions {
                limit: n,
                weighting,
                ..ExecOptions::default()
            };
            let mut hits = 0usize;
            for r in random_sample(
                Some(Arc::clone(&prefix)),
                Some(Arc::clone(&wc)),
                Arc::clone(&suffix),
                &lm,
                opts,
                CompletionFilters::default(),
                7,
            ) {
                if r.unwrap().text_string() == "a" {
                    hits += 1;
                }
            }
            hits as f64 / n as f64
        };
        let naive = run(SampleWeighting::UniformEdges, 4000);
        assert!((naive - 0.5).abs() < 0.03, "naive a-rate {naive}");
        let normalized = run(SampleWeighting::WalkNormalized, 4000);
        assert!((normalized - 0.25).abs() < 0.03, "normalized a-rate {normalized}");
    }

    #[test]
    fn conditional_probability_basics() {
        let vocab = Vocabulary::byte_level();
        let lm = NGramLm::train(vocab.clone(), "xy\nxz", 2, 0.1);
        let single =
            conditional_probability(&lm, &[120], &[vec![121]], DecisionRule::None).unwrap();
        assert_eq!(single, vec![1.0]);
        let pair = conditional_probability(
            &lm,
            &[120],
            &[vec![121], vec![122]],
            DecisionRule::None,
        )
        .unwrap();
        assert!((pair[0] - 0.5).abs() < 1e-9, "trained symmetrically");
        assert!((pair[0] + pair[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_candidates_is_an_error() {
        let vocab = Vocabulary::byte_level();
        let lm = NGramLm::train(vocab, "x", 2, 0.1);
        assert!(matches!(
            conditional_probability(&lm, &[], &[], DecisionRule::None),
            Err(ExecError::EmptyCandidates)
        ));
    }

    #[test]
    fn frontier_cap_errors_out() {
        let vocab = Vocabulary::byte_level();
        let lm = NGramLm::train(vocab.clone(), "abcdefgh", 2, 0.1);
        let suffix = Arc::new(canonical_ta("[a-h]{4}", &vocab));
        let opts = ExecOptions {
            frontier_cap: 10,
            ..ExecOptions::default()
        };
        let mut saw_error = false;
        for r in shortest_path(None, suffix, &lm, opts, CompletionFilters::default()) {
            if matches!(r, Err(ExecError::FrontierCap { .. })) {
                saw_error = true;
                break;
            }
        }
        assert!(saw_error);
    }

    #[test]
    fn runtime_filter_discards_non_canonical_paths() {
        // Vocabulary with merges so "aa" has 2 tokenizations; runtime filter
        // keeps only encode("aa") = [aa].
        let vocab = Vocabulary::from_merges(vec![(97, 97)]);
        let lm = NGramLm::train(vocab.clone(), "aa\naa", 2, 0.1);
        let ta = compile_canonical(
            &byte_automaton("aa"),
            &vocab,
            CanonicalStrategy::RuntimeFilter,
            100,
            DEFAULT_STATE_CAP,
        )
        .unwrap();
        let results: Vec<MatchResult> = shortest_path(
            None,
            Arc::new(ta),
            &lm,
            ExecOptions::default(),
            CompletionFilters::default(),
        )
        .map(|r| r.unwrap())
        .collect();
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].tokens, vocab.encode(b"aa"));
    }

    #[test]
    fn exhaustion_matches_brute_force_enumeration_scoring() {
        let vocab = Vocabulary::byte_level();
        let lm = NGramLm::train(vocab.clone(), "ab\nba\nbb\naa ab", 2, 0.3);
        let pattern = "(a|b){1,3}";
        let suffix = Arc::new(canonical_ta(pattern, &vocab));
        let emitted: Vec<(String, f64)> = shortest_path(
            None,
            suffix,
            &lm,
            ExecOptions::default(),
            CompletionFilters::default(),
        )
        .map(|r| {
            let r = r.unwrap();
            (r.text_string(), r.logprob)
        })
        .collect();
        // Brute force oracle: score every string, sort by (cost, len, tokens).
        let e = byte_automaton(pattern).enumerate(10_000);
        assert!(e.exhausted);
        let mut expected: Vec<(String, f64, Vec<TokenId>)> = e
            .strings
            .iter()
            .map(|s| {
                let bytes: Vec<u8> = s.iter().map(|&x| x as u8).collect();
                let tokens = vocab.encode(&bytes);
                let lp = crate::lm::sequence_log_prob(&lm, &tokens, DecisionRule::None, 0)
                    .unwrap()
                    .log_prob()
                    .unwrap();
                (String::from_utf8(bytes).unwrap(), lp, tokens)
            })
            .collect();
        expected.sort_by(|a, b| {
            (-a.1)
                .total_cmp(&(-b.1))
                .then(a.2.len().cmp(&b.2.len()))
                .then(a.2.cmp(&b.2))
        });
        assert_eq!(emitted.len(), expected.len());
        for ((text, lp), (etext, elp, _)) in emitted.iter().zip(&expected) {
            assert_eq!(text, etext);
            assert!((lp - elp).abs() < 1e-9);
        }
    }
}
