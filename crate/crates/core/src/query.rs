//! The user-facing query object and the compile-and-execute pipeline.
//!
//! A query is a prefix pattern and a pattern (the full language is their
//! concatenation), an encoding mode, a decision rule, a traversal, and an
//! ordered preprocessor list. `execute` runs the pipeline lazily:
//! parse, byte automata, preprocessors, token compilation, traversal.
//! Preprocessors apply to the prefix and the pattern independently, so the
//! prefix/suffix boundary and its rule-exemption semantics stay exact.

use std::sync::Arc;

use crate::automaton::{Automaton, Symbol};
use crate::compiler::{compile_canonical, compile_full, CanonicalStrategy, TokenAutomaton};
use crate::error::EngineError;
use crate::executor::{
    self, CompletionFilters, ExecOptions, MatchResult, RandomSampler, SampleWeighting,
    ShortestPathIter, TraversalStats,
};
use crate::lm::{DecisionRule, LanguageModel};
use crate::preprocess::{
    default_edit_alphabet, filter_strings, levenshtein_expand, DeferredFilter, Filtered,
    Preprocessor,
};
use crate::regex::{compile_to_automaton, parse, CompileOptions, RegexAst};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryEncoding {
    Full,
    Canonical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Traversal {
    Shortest,
    Random { seed: u64 },
}

#[derive(Debug, Clone)]
pub struct QueryLimits {
    pub max_results: usize,
    pub max_tokens: usize,
    pub frontier_cap: usize,
    pub state_cap: usize,
    /// String budget for canonical enumeration.
    pub enumeration_budget: usize,
    pub retry_budget: usize,
}

impl Default for QueryLimits {
    fn default() -> Self {
        QueryLimits {
            max_results: usize::MAX,
            max_tokens: crate::DEFAULT_MAX_TOKENS,
            frontier_cap: 1_000_000,
            state_cap: crate::DEFAULT_STATE_CAP,
            enumeration_budget: 100_000,
            retry_budget: 16,
        }
    }
}

/// A validated query. Defaults: canonical encoding, shortest-path traversal,
/// no decision rule.
#[derive(Debug, Clone)]
pub struct Query {
    pattern: String,
    prefix: String,
    pattern_ast: RegexAst,
    prefix_ast: RegexAst,
    pub encoding: QueryEncoding,
    pub canonical_strategy: CanonicalStrategy,
    pub rule: DecisionRule,
    pub traversal: Traversal,
    /// Preprocessors applied to both the prefix and the pattern.
    pub preprocessors: Vec<Preprocessor>,
    /// Preprocessors applied to the pattern region only.
    pub pattern_preprocessors: Vec<Preprocessor>,
    pub limits: QueryLimits,
    /// Alphabet for Levenshtein substitutions and insertions.
    pub edit_alphabet: Vec<u8>,
    /// Cost prefix steps at zero instead of their true log probability.
    pub prefix_zero_cost: bool,
    /// Let EOS bypass the decision rule at sampling stop decisions.
    pub exempt_eos: bool,
    /// Require an explicit EOS step after the pattern (cloze "terminated").
    pub eos_terminated: bool,
    /// Weighting for the prefix region of random sampling.
    pub weighting: SampleWeighting,
    /// Wall-clock budget for an execution; the stream ends when it passes.
    pub limit_seconds: Option<f64>,
}

pub struct QueryBuilder {
    pattern: String,
    prefix: String,
    encoding: QueryEncoding,
    canonical_strategy: CanonicalStrategy,
    rule: DecisionRule,
    traversal: Traversal,
    preprocessors: Vec<Preprocessor>,
    pattern_preprocessors: Vec<Preprocessor>,
    limits: QueryLimits,
    edit_alphabet: Vec<u8>,
    prefix_zero_cost: bool,
    exempt_eos: bool,
    eos_terminated: bool,
    weighting: SampleWeighting,
    limit_seconds: Option<f64>,
}

impl Query {
    pub fn builder(pattern: impl Into<String>) -> QueryBuilder {
        QueryBuilder {
            pattern: pattern.into(),
            prefix: String::new(),
            encoding: QueryEncoding::Canonical,
            canonical_strategy: CanonicalStrategy::Enumerate,
            rule: DecisionRule::None,
            traversal: Traversal::Shortest,
            preprocessors: vec![],
            pattern_preprocessors: vec![],
            limits: QueryLimits::default(),
            edit_alphabet: default_edit_alphabet(),
            prefix_zero_cost: false,
            exempt_eos: false,
            eos_terminated: false,
            weighting: SampleWeighting::WalkNormalized,
            limit_seconds: None,
        }
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn pattern_ast(&self) -> &RegexAst {
        &self.pattern_ast
    }

    /// Runs the pipeline against a model, returning a lazy result stream.
    /// No model calls happen before the stream is polled.
    pub fn execute<'m>(&self, model: &'m dyn LanguageModel) -> Result<Execution<'m>, EngineError> {
        let compiled = self.compile(model.vocab())?;
        self.execute_compiled(compiled, model)
    }

    /// Compiles the byte- and token-level artifacts without touching a
    /// model.
    pub fn compile(&self, vocab: &crate::tokenizer::Vocabulary) -> Result<CompiledQuery, EngineError> {
        self.compile_cached(vocab, None)
    }

    /// Like [`Query::compile`], but reuses token automata from `cache_dir`
    /// when an identical (vocabulary, byte automaton, mode) combination was
    /// compiled before, and stores fresh compilations there.
    pub fn compile_cached(
        &self,
        vocab: &crate::tokenizer::Vocabulary,
        cache_dir: Option<&std::path::Path>,
    ) -> Result<CompiledQuery, EngineError> {
        let opts = CompileOptions {
            max_states: self.limits.state_cap,
        };
        let prefix_auto = compile_to_automaton(&self.prefix_ast, &opts)
            .map_err(EngineError::Compile)?;
        let pattern_auto = compile_to_automaton(&self.pattern_ast, &opts)
            .map_err(EngineError::Compile)?;

        let (prefix_chain, prefix_deny) = self.preprocess_part(prefix_auto, &[])?;
        let (suffix_chain, suffix_deny) =
            self.preprocess_part(pattern_auto, &self.pattern_preprocessors)?;

        let prefix_final = prefix_chain.last().expect("chain never empty");
        let suffix_final = suffix_chain.last().expect("chain never empty");
        if prefix_final.enumerate(1).strings.is_empty() {
            return Err(EngineError::InvalidQuery(
                "prefix language is empty; it cannot be a factor of the query".into(),
            ));
        }
        if suffix_final.enumerate(1).strings.is_empty() {
            return Err(EngineError::InvalidQuery("pattern language is empty".into()));
        }
        let compile_part = |a: &Automaton| -> Result<TokenAutomaton, EngineError> {
            let ta = match (self.encoding, self.canonical_strategy) {
                (QueryEncoding::Full, _) => compile_full(a, vocab, self.limits.state_cap)?,
                (QueryEncoding::Canonical, CanonicalStrategy::Enumerate) => compile_canonical(
                    a,
                    vocab,
                    CanonicalStrategy::Enumerate,
                    self.limits.enumeration_budget,
                    self.limits.state_cap,
                )?,
                (QueryEncoding::Canonical, CanonicalStrategy::RuntimeFilter) => {
                    // Enumeration is exact and cheaper to traverse, so use it
                    // whenever the part's language fits the budget and fall
                    // back to runtime filtering otherwise.
                    match compile_canonical(
                        a,
                        vocab,
                        CanonicalStrategy::Enumerate,
                        self.limits.enumeration_budget,
                        self.limits.state_cap,
                    ) {
                        Ok(ta) => ta,
                        Err(crate::compiler::CompileError::EnumerationBudget { .. }) => {
                            compile_canonical(
                                a,
                                vocab,
                                CanonicalStrategy::RuntimeFilter,
                                self.limits.enumeration_budget,
                                self.limits.state_cap,
                            )?
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
            };
            Ok(ta)
        };
        // A prefix matching only the empty string adds nothing; skip it so
        // the executor starts directly in the suffix region.
        let prefix_trivial = {
            let e = prefix_final.enumerate(2);
            e.exhausted && e.strings == vec![Vec::<Symbol>::new()]
        };
        let cached_part = |a: &Automaton| -> Result<TokenAutomaton, EngineError> {
            match cache_dir {
                None => compile_part(a),
                Some(dir) => {
                    let key = cache_key(vocab, a, self.encoding, self.canonical_strategy);
                    let path = dir.join(format!("ta-{key}.txt"));
                    if let Ok(text) = std::fs::read_to_string(&path) {
                        if let Some(ta) = load_cached_token_automaton(&text) {
                            return Ok(ta);
                        }
                    }
                    let ta = compile_part(a)?;
                    let _ = std::fs::create_dir_all(dir);
                    let _ = std::fs::write(&path, dump_token_automaton(&ta));
                    Ok(ta)
                }
            }
        };
        let prefix_ta = if prefix_trivial {
            None
        } else {
            Some(Arc::new(cached_part(prefix_final)?))
        };
        let mut suffix_ta = cached_part(suffix_final)?;
        if self.eos_terminated {
            suffix_ta = suffix_ta.terminated(vocab.eos());
        }
        let suffix_ta = Arc::new(suffix_ta);
        Ok(CompiledQuery {
            prefix_ta,
            suffix_ta,
            prefix_chain,
            suffix_chain,
            prefix_deny,
            suffix_deny,
        })
    }

    /// Starts a traversal over already-compiled artifacts.
    pub fn execute_compiled<'m>(
        &self,
        compiled: CompiledQuery,
        model: &'m dyn LanguageModel,
    ) -> Result<Execution<'m>, EngineError> {
        let CompiledQuery {
            prefix_ta,
            suffix_ta,
            prefix_chain,
            suffix_chain,
            prefix_deny,
            suffix_deny,
        } = compiled;
        let exec_opts = ExecOptions {
            rule: self.rule,
            limit: self.limits.max_results,
            max_tokens: self.limits.max_tokens,
            frontier_cap: self.limits.frontier_cap,
            prefix_zero_cost: self.prefix_zero_cost,
            exempt_eos: self.exempt_eos,
            retry_budget: self.limits.retry_budget,
            weighting: self.weighting,
            deadline: self
                .limit_seconds
                .map(|s| std::time::Instant::now() + std::time::Duration::from_secs_f64(s)),
        };
        let filters = CompletionFilters {
            prefix_deny,
            suffix_deny,
        };
        let inner = match self.traversal {
            Traversal::Shortest => Inner::Shortest(Box::new(executor::shortest_path(
                prefix_ta,
                suffix_ta,
                model,
                exec_opts,
                filters,
            ))),
            Traversal::Random { seed } => {
                let wc = prefix_ta.as_ref().map(|ta| {
                    Arc::new(ta.automaton.count_walks(self.limits.max_tokens))
                });
                Inner::Random(Box::new(executor::random_sample(
                    prefix_ta,
                    wc,
                    suffix_ta,
                    model,
                    exec_opts,
                    filters,
                    seed,
                )))
            }
        };
        Ok(Execution {
            inner,
            prefix_chain,
            suffix_chain,
        })
    }

    /// Applies the shared preprocessor list plus `extra` to one part,
    /// returning the membership chain (level i accepts strings reachable
    /// with i edit expansions) and any deferred filters.
    fn preprocess_part(
        &self,
        base: Automaton,
        extra: &[Preprocessor],
    ) -> Result<(Vec<Automaton>, Vec<DeferredFilter>), EngineError> {
        let mut chain = vec![base];
        let mut deferred = Vec::new();
        for pp in self.preprocessors.iter().chain(extra) {
            match pp {
                Preprocessor::Levenshtein { distance } => {
                    for _ in 0..*distance {
                        let next = levenshtein_expand(
                            chain.last().expect("nonempty"),
                            &self.edit_alphabet,
                            self.limits.state_cap,
                        )?;
                        chain.push(next);
                    }
                }
                Preprocessor::Filter { deny, mode } => {
                    let last = chain.last_mut().expect("nonempty");
                    match filter_strings(last, deny, *mode, self.limits.state_cap)? {
                        Filtered::Automaton(filtered) => *last = filtered,
                        Filtered::Deferred(_, predicate) => deferred.push(predicate),
                    }
                }
            }
        }
        Ok((chain, deferred))
    }
}

impl QueryBuilder {
    pub fn prefix(mut self, prefix: impl Into<String>) -> Self {
        self.prefix = prefix.into();
        self
    }

    pub fn encoding(mut self, encoding: QueryEncoding) -> Self {
        self.encoding = encoding;
        self
    }

    pub fn canonical_strategy(mut self, strategy: CanonicalStrategy) -> Self {
        self.canonical_strategy = strategy;
        self
    }

    pub fn rule(mut self, rule: DecisionRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn traversal(mut self, traversal: Traversal) -> Self {
        self.traversal = traversal;
        self
    }

    pub fn preprocessor(mut self, pp: Preprocessor) -> Self {
        self.preprocessors.push(pp);
        self
    }

    /// Adds a preprocessor that transforms only the pattern region,
    /// leaving the prefix untouched.
    pub fn pattern_preprocessor(mut self, pp: Preprocessor) -> Self {
        self.pattern_preprocessors.push(pp);
        self
    }

    pub fn limits(mut self, limits: QueryLimits) -> Self {
        self.limits = limits;
        self
    }

    pub fn max_results(mut self, n: usize) -> Self {
        self.limits.max_results = n;
        self
    }

    pub fn max_tokens(mut self, n: usize) -> Self {
        self.limits.max_tokens = n;
        self
    }

    pub fn retry_budget(mut self, n: usize) -> Self {
        self.limits.retry_budget = n;
        self
    }

    pub fn edit_alphabet(mut self, alphabet: Vec<u8>) -> Self {
        self.edit_alphabet = alphabet;
        self
    }

    pub fn prefix_zero_cost(mut self, on: bool) -> Self {
        self.prefix_zero_cost = on;
        self
    }

    pub fn exempt_eos(mut self, on: bool) -> Self {
        self.exempt_eos = on;
        self
    }

    pub fn eos_terminated(mut self, on: bool) -> Self {
        self.eos_terminated = on;
        self
    }

    pub fn weighting(mut self, weighting: SampleWeighting) -> Self {
        self.weighting = weighting;
        self
    }

    pub fn limit_seconds(mut self, seconds: Option<f64>) -> Self {
        self.limit_seconds = seconds;
        self
    }

    /// Validates patterns and limits and produces the immutable query.
    pub fn build(self) -> Result<Query, EngineError> {
        let pattern_ast = parse(&self.pattern)?;
        let prefix_ast = parse(&self.prefix)?;
        if self.limits.max_tokens == 0 {
            return Err(EngineError::InvalidQuery("max_tokens must be positive".into()));
        }
        if self.limits.frontier_cap == 0 {
            return Err(EngineError::InvalidQuery(
                "frontier_cap must be positive".into(),
            ));
        }
        if self.limits.state_cap == 0 {
            return Err(EngineError::InvalidQuery("state_cap must be positive".into()));
        }
        Ok(Query {
            pattern: self.pattern,
            prefix: self.prefix,
            pattern_ast,
            prefix_ast,
            encoding: self.encoding,
            canonical_strategy: self.canonical_strategy,
            rule: self.rule,
            traversal: self.traversal,
            preprocessors: self.preprocessors,
            pattern_preprocessors: self.pattern_preprocessors,
            limits: self.limits,
            edit_alphabet: self.edit_alphabet,
            prefix_zero_cost: self.prefix_zero_cost,
            exempt_eos: self.exempt_eos,
            eos_terminated: self.eos_terminated,
            weighting: self.weighting,
            limit_seconds: self.limit_seconds,
        })
    }
}

/// Compiled pipeline artifacts: preprocessed byte automata (as membership
/// chains, level i reachable with i edit expansions), token automata for
/// both regions, and deferred filter predicates.
pub struct CompiledQuery {
    pub prefix_ta: Option<Arc<TokenAutomaton>>,
    pub suffix_ta: Arc<TokenAutomaton>,
    pub prefix_chain: Vec<Automaton>,
    pub suffix_chain: Vec<Automaton>,
    pub prefix_deny: Vec<DeferredFilter>,
    pub suffix_deny: Vec<DeferredFilter>,
}

impl CompiledQuery {
    /// Final preprocessed byte automaton of the prefix region.
    pub fn prefix_byte(&self) -> &Automaton {
        self.prefix_chain.last().expect("chain never empty")
    }

    /// Final preprocessed byte automaton of the pattern region.
    pub fn suffix_byte(&self) -> &Automaton {
        self.suffix_chain.last().expect("chain never empty")
    }
}

fn fnv64(data: &[u8], seed: u64) -> u64 {
    let mut hash = 0xcbf29ce484222325u64 ^ seed;
    for &b in data {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn cache_key(
    vocab: &crate::tokenizer::Vocabulary,
    a: &Automaton,
    encoding: QueryEncoding,
    strategy: CanonicalStrategy,
) -> String {
    let mut material = a.dump().into_bytes();
    for (id, bytes) in vocab.iter_tokens() {
        material.extend_from_slice(&id.to_le_bytes());
        material.extend_from_slice(bytes);
        material.push(0);
    }
    material.push(match (encoding, strategy) {
        (QueryEncoding::Full, _) => 0,
        (QueryEncoding::Canonical, CanonicalStrategy::Enumerate) => 1,
        (QueryEncoding::Canonical, CanonicalStrategy::RuntimeFilter) => 2,
    });
    format!(
        "{:016x}{:016x}",
        fnv64(&material, 0),
        fnv64(&material, 0x9e3779b97f4a7c15)
    )
}

fn dump_token_automaton(ta: &TokenAutomaton) -> String {
    let mode = match ta.mode {
        crate::compiler::EncodingMode::Full => "FULL",
        crate::compiler::EncodingMode::Canonical(CanonicalStrategy::Enumerate) => "CANONICAL_ENUM",
        crate::compiler::EncodingMode::Canonical(CanonicalStrategy::RuntimeFilter) => {
            "CANONICAL_RTF"
        }
    };
    format!("{mode}\n{}", ta.automaton.dump())
}

fn load_cached_token_automaton(text: &str) -> Option<TokenAutomaton> {
    let (mode_line, rest) = text.split_once('\n')?;
    let mode = match mode_line {
        "FULL" => crate::compiler::EncodingMode::Full,
        "CANONICAL_ENUM" => crate::compiler::EncodingMode::Canonical(CanonicalStrategy::Enumerate),
        "CANONICAL_RTF" => {
            crate::compiler::EncodingMode::Canonical(CanonicalStrategy::RuntimeFilter)
        }
        _ => return None,
    };
    let automaton = Automaton::parse_dump(rest).ok()?;
    Some(TokenAutomaton {
        automaton,
        mode,
        spans: Default::default(),
    })
}

enum Inner<'m> {
    Shortest(Box<ShortestPathIter<'m>>),
    Random(Box<RandomSampler<'m>>),
}

/// Lazy result stream attaching edit metadata to each match.
pub struct Execution<'m> {
    inner: Inner<'m>,
    prefix_chain: Vec<Automaton>,
    suffix_chain: Vec<Automaton>,
}

impl<'m> Execution<'m> {
    pub fn stats(&self) -> Arc<TraversalStats> {
        match &self.inner {
            Inner::Shortest(it) => it.stats(),
            Inner::Random(it) => it.stats(),
        }
    }

    /// Minimal expansion level of the chain accepting `bytes`.
    fn chain_level(chain: &[Automaton], bytes: &[u8]) -> u32 {
        let syms: Vec<Symbol> = bytes.iter().map(|&b| Symbol::from(b)).collect();
        for (level, a) in chain.iter().enumerate() {
            if a.accepts(&syms) {
                return level as u32;
            }
        }
        debug_assert!(false, "emitted string outside every chain level");
        (chain.len() - 1) as u32
    }

    fn annotate(&self, mut result: MatchResult) -> MatchResult {
        let split = result.prefix_byte_len.min(result.text.len());
        let (prefix_bytes, suffix_bytes) = result.text.split_at(split);
        let prefix_edits = if self.prefix_chain.len() > 1 {
            Self::chain_level(&self.prefix_chain, prefix_bytes)
        } else {
            0
        };
        let suffix_edits = if self.suffix_chain.len() > 1 {
            Self::chain_level(&self.suffix_chain, suffix_bytes)
        } else {
            0
        };
        result.n_edits = prefix_edits + suffix_edits;
        result
    }
}

impl<'m> Iterator for Execution<'m> {
    type Item = Result<MatchResult, EngineError>;

    fn next(&mut self) -> Option<Self::Item> {
        let item = match &mut self.inner {
            Inner::Shortest(it) => it.next(),
            Inner::Random(it) => it.next(),
        };
        match item {
            Some(Ok(result)) => Some(Ok(self.annotate(result))),
            Some(Err(e)) => Some(Err(EngineError::Execute(e))),
            None => None,
        }
    }
}
