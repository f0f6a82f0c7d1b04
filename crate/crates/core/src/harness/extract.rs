//! Extraction-throughput harness: engine-driven shortest-path extraction
//! against fixed-length random-generation baselines.
//!
//! The engine mode traverses the pattern in probability order, so it never
//! emits the same string twice. Baselines sample freely from the model for
//! a fixed number of tokens per attempt (the classic prefix-attack shape)
//! and are scored on how many unique pattern-valid strings they find.

use std::collections::HashSet;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::automaton::Symbol;
use crate::error::EngineError;
use crate::lm::{apply_rule, CountingLm, DecisionRule, LanguageModel};
use crate::query::{Query, QueryEncoding, Traversal};
use crate::regex::{compile_to_automaton, parse, CompileOptions};
use crate::tokenizer::TokenId;

#[derive(Debug, Clone)]
pub struct ExtractConfig {
    pub pattern: String,
    pub prefix: String,
    pub rule: DecisionRule,
    /// Emission budget for the engine mode.
    pub budget: usize,
    /// Attempts per baseline stop length.
    pub baseline_attempts: usize,
    /// Baseline stop lengths in tokens; powers of two by default.
    pub baseline_lengths: Vec<usize>,
    pub max_tokens: usize,
    pub seed: u64,
}

impl ExtractConfig {
    pub fn new(pattern: impl Into<String>, prefix: impl Into<String>) -> Self {
        ExtractConfig {
            pattern: pattern.into(),
            prefix: prefix.into(),
            rule: DecisionRule::TopK(40),
            budget: 100,
            baseline_attempts: 200,
            baseline_lengths: (0..=6).map(|i| 1 << i).collect(),
            max_tokens: crate::DEFAULT_MAX_TOKENS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeReport {
    pub attempts: u64,
    pub unique_valid: u64,
    pub duplicates: u64,
    pub model_calls: u64,
    /// Unique valid strings per thousand model calls.
    pub throughput: f64,
}

impl ModeReport {
    fn finish(attempts: u64, unique_valid: u64, duplicates: u64, model_calls: u64) -> Self {
        ModeReport {
            attempts,
            unique_valid,
            duplicates,
            model_calls,
            throughput: if model_calls == 0 {
                0.0
            } else {
                unique_valid as f64 * 1000.0 / model_calls as f64
            },
        }
    }

    pub fn calls_per_unique(&self) -> f64 {
        if self.unique_valid == 0 {
            f64::INFINITY
        } else {
            self.model_calls as f64 / self.unique_valid as f64
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtractReport {
    pub engine: ModeReport,
    pub engine_strings: Vec<String>,
    /// One report per baseline stop length, in the configured order.
    pub baselines: Vec<(usize, ModeReport)>,
}

impl ExtractReport {
    pub fn best_baseline(&self) -> Option<&(usize, ModeReport)> {
        self.baselines
            .iter()
            .filter(|(_, r)| r.unique_valid > 0)
            .min_by(|a, b| a.1.calls_per_unique().total_cmp(&b.1.calls_per_unique()))
    }
}

/// Runs both modes. `validator` is a pure predicate applied on top of
/// syntactic pattern validity (pass `|_| true` for syntax-only checking).
pub fn harness_extract(
    config: &ExtractConfig,
    validator: &dyn Fn(&str) -> bool,
    model: &dyn LanguageModel,
) -> Result<ExtractReport, EngineError> {
    if config.budget == 0 {
        return Err(EngineError::InvalidQuery("extraction budget is zero".into()));
    }
    // Full-pattern byte automaton for validating baseline generations.
    let full_pattern = format!("{}{}", crate::regex::escape_literal(&config.prefix), config.pattern);
    let full_ast = parse(&full_pattern)?;
    let full_auto = compile_to_automaton(&full_ast, &CompileOptions::default())
        .map_err(EngineError::Compile)?;
    let accepts = |text: &[u8]| {
        let syms: Vec<Symbol> = text.iter().map(|&b| Symbol::from(b)).collect();
        full_auto.accepts(&syms)
    };

    // Engine mode.
    let counting = CountingLm::new(model);
    let query = Query::builder(config.pattern.clone())
        .prefix(crate::regex::escape_literal(&config.prefix))
        .encoding(QueryEncoding::Canonical)
        .rule(config.rule)
        .traversal(Traversal::Shortest)
        .max_results(config.budget)
        .max_tokens(config.max_tokens)
        .build()?;
    let mut unique: HashSet<String> = HashSet::new();
    let mut engine_strings = Vec::new();
    let mut duplicates = 0u64;
    let mut attempts = 0u64;
    for item in query.execute(&counting)? {
        let result = item?;
        attempts += 1;
        let text = result.text_string();
        if !validator(&text) {
            continue;
        }
        if unique.insert(text.clone()) {
            engine_strings.push(text);
        } else {
            duplicates += 1;
        }
    }
    let engine = ModeReport::finish(attempts, unique.len() as u64, duplicates, counting.calls());

    // Fixed-length baselines.
    let prefix_tokens = model.vocab().encode(config.prefix.as_bytes());
    let mut baselines = Vec::new();
    for &n in &config.baseline_lengths {
        let counting = CountingLm::new(model);
        let mut rng = StdRng::seed_from_u64(config.seed ^ (n as u64).wrapping_mul(0x9e37));
        let mut seen: HashSet<Vec<u8>> = HashSet::new();
        let mut unique_valid = 0u64;
        let mut duplicates = 0u64;
        for _ in 0..config.baseline_attempts {
            let Some(generated) =
                sample_fixed_length(&counting, config.rule, &prefix_tokens, n, &mut rng)
            else {
                continue;
            };
            let mut text = config.prefix.as_bytes().to_vec();
            text.extend_from_slice(&counting.vocab().decode(&generated).unwrap_or_default());
            let valid = accepts(&text) && validator(&String::from_utf8_lossy(&text));
            if !valid {
                continue;
            }
            if seen.insert(text) {
                unique_valid += 1;
            } else {
                duplicates += 1;
            }
        }
        baselines.push((
            n,
            ModeReport::finish(
                config.baseline_attempts as u64,
                unique_valid,
                duplicates,
                counting.calls(),
            ),
        ));
    }

    Ok(ExtractReport {
        engine,
        engine_strings,
        baselines,
    })
}

/// Samples exactly `n` tokens from the model under the rule (renormalized),
/// or `None` on a dead end.
fn sample_fixed_length(
    model: &dyn LanguageModel,
    rule: DecisionRule,
    prefix_tokens: &[TokenId],
    n: usize,
    rng: &mut StdRng,
) -> Option<Vec<TokenId>> {
    let mut context = prefix_tokens.to_vec();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        if context.len() >= model.max_len() {
            return None;
        }
        let dist = model.next_distribution(&context).ok()?;
        let admissible = apply_rule(&dist, rule);
        let total: f64 = admissible.iter().map(|&t| dist[t as usize]).sum();
        if admissible.is_empty() || total <= 0.0 {
            return None;
        }
        let mut draw = rng.gen_range(0.0..total);
        let mut chosen = *admissible.last().unwrap();
        for &t in &admissible {
            let p = dist[t as usize];
            if draw < p {
                chosen = t;
                break;
            }
            draw -= p;
        }
        context.push(chosen);
        out.push(chosen);
    }
    Some(out)
}
