//! Lifts byte-level automata into the tokenizer's alphabet.
//!
//! The full (ambiguous) form keeps the byte automaton's states and adds one
//! shortcut edge per multi-byte token per place the token's byte string can
//! be walked, so every tokenization of every accepted string is an accepting
//! token path. The canonical form accepts exactly one token path per string:
//! the tokenizer's encoder output.

use thiserror::Error;

use crate::automaton::{AlphabetTag, Automaton, AutomatonError, NfaBuilder, StateId, Symbol};
use crate::tokenizer::{TokenId, Vocabulary};

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("byte automaton must be deterministic")]
    SourceNotDeterministic,
    #[error("expected a byte-alphabet automaton, got {0}")]
    WrongAlphabet(AlphabetTag),
    #[error(
        "canonical enumeration needs a finite language within {budget} strings; \
         use the runtime-filter strategy instead"
    )]
    EnumerationBudget { budget: usize },
    #[error(transparent)]
    Automaton(#[from] AutomatonError),
}

/// How the canonical token automaton is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CanonicalStrategy {
    /// Enumerate the byte language, encode every string, build a trie.
    /// Exact but requires a finite language within the string budget.
    Enumerate,
    /// Traverse the full automaton and reject completed paths that are not
    /// the canonical encoding of their decoded string.
    RuntimeFilter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodingMode {
    Full,
    Canonical(CanonicalStrategy),
}

impl EncodingMode {
    /// True when the executor must check completed paths for canonicality.
    pub fn needs_runtime_canonical_check(&self) -> bool {
        matches!(self, EncodingMode::Canonical(CanonicalStrategy::RuntimeFilter))
    }
}

/// A token-alphabet automaton with its encoding mode and, for full
/// compilations, the byte-state span each token edge covers.
#[derive(Debug, Clone)]
pub struct TokenAutomaton {
    pub automaton: Automaton,
    pub mode: EncodingMode,
    /// `(from_state, token) -> (byte_from, byte_to)` in the source byte
    /// automaton. Populated by [`compile_full`]; enumerated canonical
    /// automata have fresh states and leave this empty.
    pub spans: std::collections::HashMap<(StateId, TokenId), (StateId, StateId)>,
}

impl TokenAutomaton {
    /// Appends an explicit end-of-sequence edge after every accepting state,
    /// so only EOS-terminated token paths accept.
    pub fn terminated(&self, eos: TokenId) -> TokenAutomaton {
        let a = &self.automaton;
        let n = a.num_states();
        let mut builder = NfaBuilder::new(AlphabetTag::Token, n + 2);
        for _ in 0..=n {
            builder.add_state().expect("cap sized to fit");
        }
        let sink = n as StateId;
        builder.set_initial(a.initial());
        builder.set_final(sink, true);
        for q in 0..n as StateId {
            for &(sym, t) in a.edges_from(q) {
                builder.add_edge(q, sym, t);
            }
            if a.is_final(q) {
                builder.add_edge(q, eos, sink);
            }
        }
        TokenAutomaton {
            automaton: builder.build(),
            mode: self.mode,
            spans: self.spans.clone(),
        }
    }

    /// DOT dump with decoded token labels (space rendered as the usual
    /// marker).
    pub fn to_dot(&self, vocab: &Vocabulary) -> String {
        self.automaton.to_dot_with(|sym| vocab.render_token(sym))
    }
}

/// All state pairs `(u, v)` such that the byte path for `word` runs from
/// `u` to `v` in the deterministic automaton. Each start state costs
/// `O(|word|)` probes.
pub fn get_connecting_walks(
    automaton: &Automaton,
    word: &[u8],
) -> Result<Vec<(StateId, StateId)>, CompileError> {
    if !automaton.is_deterministic() {
        return Err(CompileError::SourceNotDeterministic);
    }
    let mut out = Vec::new();
    for u in 0..automaton.num_states() as StateId {
        let mut at = u;
        let mut ok = true;
        for &b in word {
            match automaton.step(at, Symbol::from(b)) {
                Some(next) => at = next,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            out.push((u, at));
        }
    }
    Ok(out)
}

/// Compiles the full (all-ambiguous-encodings) token automaton: the byte
/// graph becomes single-byte token edges, then every multi-byte token adds
/// one shortcut edge per connecting walk. Token ids are visited in
/// ascending order. Runs in `O(V * k * m_max)`.
pub fn compile_full(
    automaton: &Automaton,
    vocab: &Vocabulary,
    cap: usize,
) -> Result<TokenAutomaton, CompileError> {
    if automaton.tag() != AlphabetTag::Byte {
        return Err(CompileError::WrongAlphabet(automaton.tag()));
    }
    if !automaton.is_deterministic() {
        return Err(CompileError::SourceNotDeterministic);
    }
    let trimmed = automaton.trim();
    let n = trimmed.num_states();
    if n > cap {
        return Err(CompileError::Automaton(AutomatonError::StateCapExceeded {
            cap,
        }));
    }
    let mut builder = NfaBuilder::new(AlphabetTag::Token, n.max(1));
    for _ in 0..n {
        builder.add_state()?;
    }
    builder.set_initial(trimmed.initial());
    for q in trimmed.final_states() {
        builder.set_final(q, true);
    }
    let mut spans = std::collections::HashMap::new();
    // Byte edges become their single-byte token (token id == byte value).
    for q in 0..n as StateId {
        for &(sym, t) in trimmed.edges_from(q) {
            builder.add_edge(q, sym, t);
            spans.insert((q, sym as TokenId), (q, t));
        }
    }
    for (id, bytes) in vocab.iter_tokens() {
        if bytes.len() < 2 {
            continue;
        }
        for (u, v) in get_connecting_walks(&trimmed, bytes)? {
            builder.add_edge(u, id, v);
            spans.insert((u, id), (u, v));
        }
    }
    Ok(TokenAutomaton {
        automaton: builder.build(),
        mode: EncodingMode::Full,
        spans,
    })
}

/// Compiles the canonical token automaton under the chosen strategy.
pub fn compile_canonical(
    automaton: &Automaton,
    vocab: &Vocabulary,
    strategy: CanonicalStrategy,
    string_budget: usize,
    cap: usize,
) -> Result<TokenAutomaton, CompileError> {
    match strategy {
        CanonicalStrategy::Enumerate => {
            let enumeration = automaton.enumerate(string_budget);
            if !enumeration.exhausted {
                return Err(CompileError::EnumerationBudget {
                    budget: string_budget,
                });
            }
            let encoded: Vec<Vec<Symbol>> = enumeration
                .strings
                .iter()
                .map(|s| {
                    let bytes: Vec<u8> = s.iter().map(|&sym| sym as u8).collect();
                    vocab.encode(&bytes)
                })
                .collect();
            let trie = Automaton::from_strings(AlphabetTag::Token, encoded);
            let minimized = trie.minimize()?;
            Ok(TokenAutomaton {
                automaton: minimized,
                mode: EncodingMode::Canonical(CanonicalStrategy::Enumerate),
                spans: Default::default(),
            })
        }
        CanonicalStrategy::RuntimeFilter => {
            let full = compile_full(automaton, vocab, cap)?;
            Ok(TokenAutomaton {
                automaton: full.automaton,
                mode: EncodingMode::Canonical(CanonicalStrategy::RuntimeFilter),
                spans: full.spans,
            })
        }
    }
}
