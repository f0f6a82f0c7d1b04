//! Cloze (fill-in-the-blank) harness with four pattern variants: an open
//! word completion, the same restricted to context words, an explicitly
//! EOS-terminated form, and the terminated form minus stop words. Each item
//! is answered by the top shortest-path result.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::EngineError;
use crate::lm::{CountingLm, DecisionRule, LanguageModel};
use crate::preprocess::{FilterMode, Preprocessor};
use crate::query::{Query, QueryEncoding, Traversal};
use crate::regex::{compile_to_automaton, escape_literal, parse, CompileOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ClozeVariant {
    Baseline,
    Words,
    Terminated,
    NoStop,
}

#[derive(Debug, Clone)]
pub struct ClozeConfig {
    pub variant: ClozeVariant,
    pub rule: DecisionRule,
    /// Items to evaluate from the head of the dataset.
    pub n_items: usize,
    pub stopwords: Vec<String>,
    pub max_tokens: usize,
}

impl ClozeConfig {
    pub fn new(variant: ClozeVariant) -> Self {
        ClozeConfig {
            variant,
            rule: DecisionRule::None,
            n_items: usize::MAX,
            stopwords: super::DEFAULT_STOPWORDS
                .lines()
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
            max_tokens: crate::DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClozeItemReport {
    pub context: String,
    pub answer: String,
    pub prediction: Option<String>,
    pub correct: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClozeReport {
    pub variant: ClozeVariant,
    pub items: Vec<ClozeItemReport>,
    pub accuracy: f64,
    /// Most frequent predictions with counts, descending.
    pub top_predictions: Vec<(String, u64)>,
    pub model_calls: u64,
}

/// Optional trailing punctuation and quote allowed after the word.
const TAIL: &str = "(\\.|!|\\?)?(\")?";

/// The open word-completion pattern.
pub fn baseline_pattern() -> String {
    format!("([a-zA-Z]+){TAIL}")
}

/// The completion pattern restricted to the given words.
pub fn words_pattern(words: &[String]) -> String {
    let body = words
        .iter()
        .map(|w| format!("({})", escape_literal(w)))
        .collect::<Vec<_>>()
        .join("|");
    format!("({body}){TAIL}")
}

/// Deny pattern matching any stop word with the same optional tail.
pub fn stop_deny_pattern(stopwords: &[String]) -> String {
    words_pattern(stopwords)
}

/// Distinct alphabetic words of the context, in first-occurrence order.
pub fn context_words(context: &str) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for word in context.split(|c: char| !c.is_ascii_alphabetic()) {
        if !word.is_empty() && seen.insert(word.to_string()) {
            out.push(word.to_string());
        }
    }
    out
}

/// Builds the per-item query for a variant.
pub fn variant_query(
    variant: ClozeVariant,
    context: &str,
    rule: DecisionRule,
    stopwords: &[String],
    max_tokens: usize,
) -> Result<Query, EngineError> {
    let pattern = match variant {
        ClozeVariant::Baseline | ClozeVariant::Terminated | ClozeVariant::NoStop => {
            baseline_pattern()
        }
        ClozeVariant::Words => {
            let words = context_words(context);
            if words.is_empty() {
                baseline_pattern()
            } else {
                words_pattern(&words)
            }
        }
    };
    let mut builder = Query::builder(pattern)
        .prefix(escape_literal(context))
        .encoding(QueryEncoding::Canonical)
        .canonical_strategy(crate::compiler::CanonicalStrategy::RuntimeFilter)
        .rule(rule)
        .traversal(Traversal::Shortest)
        .max_results(1)
        .max_tokens(max_tokens);
    if matches!(variant, ClozeVariant::Terminated | ClozeVariant::NoStop) {
        builder = builder.eos_terminated(true);
    }
    if variant == ClozeVariant::NoStop {
        let deny_ast = parse(&stop_deny_pattern(stopwords))?;
        let deny = compile_to_automaton(&deny_ast, &CompileOptions::default())
            .map_err(EngineError::Compile)?;
        builder = builder.preprocessor(Preprocessor::Filter {
            deny,
            mode: FilterMode::Deferred,
        });
    }
    builder.build()
}

/// Strips the optional punctuation/quote tail from a completion.
pub fn strip_tail(completion: &str) -> &str {
    completion.trim_end_matches(['"', '.', '!', '?'])
}

/// Dataset lines are `context<TAB>answer`.
pub fn harness_cloze(
    dataset: &str,
    config: &ClozeConfig,
    model: &dyn LanguageModel,
) -> Result<ClozeReport, EngineError> {
    let model = CountingLm::new(model);
    let mut items = Vec::new();
    let mut prediction_counts: BTreeMap<String, u64> = BTreeMap::new();
    for (lineno, line) in dataset.lines().enumerate() {
        if items.len() >= config.n_items {
            break;
        }
        if line.is_empty() {
            continue;
        }
        let Some((context, answer)) = line.split_once('\t') else {
            return Err(EngineError::InvalidQuery(format!(
                "malformed cloze line {}: expected context<TAB>answer",
                lineno + 1
            )));
        };
        let query = variant_query(
            config.variant,
            context,
            config.rule,
            &config.stopwords,
            config.max_tokens,
        )?;
        let mut prediction = None;
        if let Some(item) = query.execute(&model)?.next() {
            let result = item?;
            let text = result.text_string();
            let completion = &text[result.prefix_byte_len.min(text.len())..];
            prediction = Some(strip_tail(completion.trim_start()).to_string());
        }
        let correct = prediction.as_deref() == Some(answer);
        if let Some(p) = &prediction {
            *prediction_counts.entry(p.clone()).or_insert(0) += 1;
        }
        items.push(ClozeItemReport {
            context: context.to_string(),
            answer: answer.to_string(),
            prediction,
            correct,
        });
    }
    if items.is_empty() {
        return Err(EngineError::InvalidQuery("empty cloze dataset".into()));
    }
    let accuracy = items.iter().filter(|i| i.correct).count() as f64 / items.len() as f64;
    let mut top: Vec<(String, u64)> = prediction_counts.into_iter().collect();
    top.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    top.truncate(10);
    Ok(ClozeReport {
        variant: config.variant,
        items,
        accuracy,
        top_predictions: top,
        model_calls: model.calls(),
    })
}
