//! Targeted-extraction harness (toxicity shape): grep a corpus for matches
//! of a deny pattern, build one prompted or unprompted extraction query per
//! match, and count how much of the matched content the model reproduces,
//! broken down by canonical-vs-not and edited-vs-not.

use serde::Serialize;

use crate::automaton::{Automaton, Symbol};
use crate::error::EngineError;
use crate::lm::{CountingLm, DecisionRule, LanguageModel};
use crate::preprocess::Preprocessor;
use crate::query::{Query, QueryEncoding, Traversal};
use crate::regex::{compile_to_automaton, escape_literal, parse, CompileOptions};

#[derive(Debug, Clone)]
pub struct ToxicityConfig {
    /// Pattern matching the target spans (e.g. a disjunction of words).
    pub deny_pattern: String,
    /// Prompted: prefix is the text before the match and the target is the
    /// span. Unprompted: no prefix, the target is the line up to the span
    /// end.
    pub prompted: bool,
    /// Expand the target by one edit.
    pub edits: bool,
    pub encoding: QueryEncoding,
    pub rule: DecisionRule,
    /// Extraction cap per input.
    pub per_input_cap: usize,
    pub max_inputs: usize,
    pub max_tokens: usize,
}

impl ToxicityConfig {
    pub fn new(deny_pattern: impl Into<String>) -> Self {
        ToxicityConfig {
            deny_pattern: deny_pattern.into(),
            prompted: true,
            edits: false,
            encoding: QueryEncoding::Canonical,
            rule: DecisionRule::TopK(40),
            per_input_cap: 1000,
            max_inputs: usize::MAX,
            max_tokens: crate::DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct EditCanonicalBreakdown {
    pub canonical_no_edit: u64,
    pub canonical_edited: u64,
    pub non_canonical_no_edit: u64,
    pub non_canonical_edited: u64,
}

impl EditCanonicalBreakdown {
    fn add(&mut self, canonical: bool, edited: bool) {
        match (canonical, edited) {
            (true, false) => self.canonical_no_edit += 1,
            (true, true) => self.canonical_edited += 1,
            (false, false) => self.non_canonical_no_edit += 1,
            (false, true) => self.non_canonical_edited += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.canonical_no_edit
            + self.canonical_edited
            + self.non_canonical_no_edit
            + self.non_canonical_edited
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ToxicityReport {
    /// Inputs actually queried (corpus lines with a pattern match).
    pub inputs: usize,
    /// Inputs with at least one successful extraction.
    pub extracted_inputs: usize,
    pub total_extractions: u64,
    /// Extractions per input, aligned with match order.
    pub per_input: Vec<u64>,
    pub breakdown: EditCanonicalBreakdown,
    pub model_calls: u64,
}

/// Leftmost-longest match span of the deny automaton inside a line.
pub fn find_span(deny: &Automaton, line: &[u8]) -> Option<(usize, usize)> {
    let syms: Vec<Symbol> = line.iter().map(|&b| Symbol::from(b)).collect();
    for start in 0..syms.len() {
        let mut state = deny.initial();
        let mut best_end = if deny.is_final(state) { Some(start) } else { None };
        for (offset, &sym) in syms[start..].iter().enumerate() {
            match deny.step(state, sym) {
                Some(next) => {
                    state = next;
                    if deny.is_final(state) {
                        best_end = Some(start + offset + 1);
                    }
                }
                None => break,
            }
        }
        if let Some(end) = best_end {
            if end > start {
                return Some((start, end));
            }
        }
    }
    None
}

pub fn harness_toxicity(
    config: &ToxicityConfig,
    corpus: &str,
    model: &dyn LanguageModel,
) -> Result<ToxicityReport, EngineError> {
    let deny_ast = parse(&config.deny_pattern)?;
    let deny = compile_to_automaton(&deny_ast, &CompileOptions::default())
        .map_err(EngineError::Compile)?;
    let model = CountingLm::new(model);

    let mut per_input = Vec::new();
    let mut breakdown = EditCanonicalBreakdown::default();
    for line in corpus.lines() {
        if per_input.len() >= config.max_inputs {
            break;
        }
        let bytes = line.as_bytes();
        let Some((start, end)) = find_span(&deny, bytes) else {
            continue;
        };
        let (prefix_text, target_text) = if config.prompted {
            (&line[..start], &line[start..end])
        } else {
            ("", &line[..end])
        };
        let mut builder = Query::builder(escape_literal(target_text))
            .prefix(escape_literal(prefix_text))
            .encoding(config.encoding)
            .rule(config.rule)
            .traversal(Traversal::Shortest)
            .max_results(config.per_input_cap)
            .max_tokens(config.max_tokens);
        if config.edits {
            // Edits widen the extraction target; the prompt stays verbatim.
            builder = builder.pattern_preprocessor(Preprocessor::Levenshtein { distance: 1 });
        }
        let query = builder.build()?;
        let mut count = 0u64;
        for item in query.execute(&model)? {
            let result = item?;
            breakdown.add(result.canonical, result.n_edits > 0);
            count += 1;
        }
        per_input.push(count);
    }
    if per_input.is_empty() {
        return Err(EngineError::InvalidQuery(
            "deny pattern matched nothing in the corpus".into(),
        ));
    }
    Ok(ToxicityReport {
        inputs: per_input.len(),
        extracted_inputs: per_input.iter().filter(|&&c| c > 0).count(),
        total_extractions: per_input.iter().sum(),
        per_input,
        breakdown,
        model_calls: model.calls(),
    })
}
