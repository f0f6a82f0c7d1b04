//! Query-time automaton transformations, applied to the byte-level
//! automaton before token compilation: Levenshtein edit-distance expansion
//! and string filters (eager set difference or a deferred completion-time
//! predicate).

use thiserror::Error;

use crate::automaton::{AlphabetTag, Automaton, AutomatonError, NfaBuilder, StateId, Symbol};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("expected byte-alphabet automata")]
    WrongAlphabet,
    #[error("eager filtering blew past the state cap; retry with deferred mode")]
    EagerBlowup(#[source] AutomatonError),
    #[error(transparent)]
    Automaton(#[from] AutomatonError),
}

/// Insertion/substitution alphabet used by edits unless a caller overrides
/// it: printable ASCII. Staying inside ASCII keeps edited strings valid
/// UTF-8.
pub fn default_edit_alphabet() -> Vec<u8> {
    (0x20..=0x7eu8).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    /// Subtract the deny language from the automaton up front.
    Eager,
    /// Leave the automaton unchanged; reject matching strings at completion.
    Deferred,
}

/// A query-time transformation of the byte automaton.
#[derive(Debug, Clone)]
pub enum Preprocessor {
    Levenshtein { distance: u32 },
    Filter { deny: Automaton, mode: FilterMode },
}

/// Accepts exactly the strings within edit distance 1 of the input
/// language, with substitutions and insertions drawn from `alphabet`. The
/// result is deterministic and minimized; chain `d` applications for
/// distance `d`.
pub fn levenshtein_expand(
    automaton: &Automaton,
    alphabet: &[u8],
    cap: usize,
) -> Result<Automaton, PreprocessError> {
    if automaton.tag() != AlphabetTag::Byte {
        return Err(PreprocessError::WrongAlphabet);
    }
    let src = automaton.trim();
    let n = src.num_states();
    if n == 0 || 2 * n > cap {
        return Err(PreprocessError::Automaton(
            AutomatonError::StateCapExceeded { cap },
        ));
    }
    // Two layers: states q (zero edits used) and n + q (one edit used).
    let mut b = NfaBuilder::new(AlphabetTag::Byte, 2 * n);
    for _ in 0..2 * n {
        b.add_state()?;
    }
    b.set_initial(src.initial());
    for q in 0..n as StateId {
        if src.is_final(q) {
            b.set_final(q, true);
            b.set_final(n as StateId + q, true);
        }
        for &(sym, t) in src.edges_from(q) {
            // Unedited walk in both layers.
            b.add_edge(q, sym, t);
            b.add_edge(n as StateId + q, sym, n as StateId + t);
            // Substitution: consume a different byte, advance, burn the edit.
            for &c in alphabet {
                if Symbol::from(c) != sym {
                    b.add_edge(q, Symbol::from(c), n as StateId + t);
                }
            }
            // Deletion: advance without consuming.
            b.add_epsilon(q, n as StateId + t);
        }
        // Insertion: consume any byte without advancing.
        for &c in alphabet {
            b.add_edge(q, Symbol::from(c), n as StateId + q);
        }
    }
    let nfa = b.build();
    let det = nfa.determinize(cap)?;
    Ok(det.minimize()?)
}

/// Result of applying a filter.
pub enum Filtered {
    /// The filtered automaton (eager mode).
    Automaton(Automaton),
    /// The input automaton untouched plus a completion-time predicate
    /// (deferred mode).
    Deferred(Automaton, DeferredFilter),
}

/// Completion-time rejection predicate for deferred filters.
#[derive(Debug, Clone)]
pub struct DeferredFilter {
    deny: Automaton,
}

impl DeferredFilter {
    pub fn rejects(&self, text: &[u8]) -> bool {
        let syms: Vec<Symbol> = text.iter().map(|&b| Symbol::from(b)).collect();
        self.deny.accepts(&syms)
    }
}

/// Removes the deny language from the automaton, either eagerly (automaton
/// difference over the full byte alphabet) or deferred to completion time.
pub fn filter_strings(
    automaton: &Automaton,
    deny: &Automaton,
    mode: FilterMode,
    cap: usize,
) -> Result<Filtered, PreprocessError> {
    if automaton.tag() != AlphabetTag::Byte || deny.tag() != AlphabetTag::Byte {
        return Err(PreprocessError::WrongAlphabet);
    }
    match mode {
        FilterMode::Eager => {
            let alphabet: Vec<Symbol> = (0u16..256).map(Symbol::from).collect();
            let diff = automaton
                .difference(deny, &alphabet, cap)
                .map_err(PreprocessError::EagerBlowup)?;
            Ok(Filtered::Automaton(diff.minimize()?))
        }
        FilterMode::Deferred => Ok(Filtered::Deferred(
            automaton.clone(),
            DeferredFilter { deny: deny.clone() },
        )),
    }
}

/// Longest common prefix length of two byte strings; used to locate where an
/// edited sample diverges from its source for edit-position reports.
pub fn divergence_position(source: &[u8], sample: &[u8]) -> usize {
    source
        .iter()
        .zip(sample.iter())
        .take_while(|(a, b)| a == b)
        .count()
}
