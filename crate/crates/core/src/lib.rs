//! A regular-expression query engine for autoregressive language models.
//!
//! The engine compiles character-level regular expressions into byte-level
//! finite automata, lifts them into the token alphabet of a subword
//! tokenizer (either every tokenization of every string, or only the
//! canonical ones), and traverses the result against a pluggable language
//! model under decoding rules. Traversals stream matching strings either in
//! highest-probability-first order (best-first search over the implicit
//! product graph) or as unbiased random samples (walk-count-normalized
//! prefix sampling).
//!
//! The main entry point for embedding is [`query::Query`]; the lower layers
//! are usable on their own:
//!
//! * [`regex`] — pattern parsing and compilation to byte automata
//! * [`automaton`] — the shared automaton structure and algebra
//! * [`tokenizer`] — a byte-level BPE vocabulary with encode/decode
//! * [`compiler`] — byte automaton to token automaton lifting
//! * [`lm`] — the language-model trait, decision rules, and reference models
//! * [`executor`] — shortest-path and random-sampling traversals
//! * [`preprocess`] — Levenshtein expansion and string filters
//! * [`harness`] — validation-task harnesses (extraction, bias, toxicity, cloze)

pub mod automaton;
pub mod compiler;
pub mod error;
pub mod executor;
pub mod harness;
pub mod lm;
pub mod preprocess;
pub mod query;
pub mod reference;
pub mod regex;
pub mod testkit;
pub mod tokenizer;

pub use automaton::{AlphabetTag, Automaton, StateId, Symbol, WalkCountTable};
pub use error::{EngineError, Stage};
pub use executor::MatchResult;
pub use lm::{DecisionRule, LanguageModel};
pub use query::Query;
pub use tokenizer::Vocabulary;

/// Hard ceiling on automaton sizes unless a caller overrides it.
pub const DEFAULT_STATE_CAP: usize = 1_000_000;

/// Default maximum sequence length for desk-scale models and walk counting.
pub const DEFAULT_MAX_TOKENS: usize = 64;
