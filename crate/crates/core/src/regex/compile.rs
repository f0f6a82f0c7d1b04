//! Thompson construction from the AST, followed by epsilon elimination,
//! determinization, and minimization.

use crate::automaton::{AlphabetTag, Automaton, AutomatonError, NfaBuilder, StateId};
use crate::DEFAULT_STATE_CAP;

use super::{AstKind, RegexAst};

#[derive(Debug, Clone)]
pub struct CompileOptions {
    /// Hard cap on intermediate and final state counts.
    pub max_states: usize,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            max_states: DEFAULT_STATE_CAP,
        }
    }
}

/// Compiles an AST into a deterministic, minimized byte automaton whose
/// language is exactly the AST's.
pub fn compile_to_automaton(
    ast: &RegexAst,
    opts: &CompileOptions,
) -> Result<Automaton, AutomatonError> {
    let mut builder = NfaBuilder::new(AlphabetTag::Byte, opts.max_states);
    let start = builder.add_state()?;
    builder.set_initial(start);
    let end = emit(&mut builder, ast, start)?;
    builder.set_final(end, true);
    let nfa = builder.build();
    let dfa = nfa.determinize(opts.max_states)?;
    dfa.minimize()
}

/// Emits the fragment for `ast` starting at `from`; returns its exit state.
fn emit(b: &mut NfaBuilder, ast: &RegexAst, from: StateId) -> Result<StateId, AutomatonError> {
    match &ast.kind {
        AstKind::Literal(byte) => {
            let next = b.add_state()?;
            b.add_edge(from, u32::from(*byte), next);
            Ok(next)
        }
        AstKind::Epsilon => Ok(from),
        AstKind::EmptySet => {
            // A fresh state with no incoming accepting path.
            b.add_state()
        }
        AstKind::Class(set) => {
            let next = b.add_state()?;
            for &byte in set {
                b.add_edge(from, u32::from(byte), next);
            }
            Ok(next)
        }
        AstKind::Concat(items) => {
            let mut at = from;
            for item in items {
                at = emit(b, item, at)?;
            }
            Ok(at)
        }
        AstKind::Alternation(items) => {
            let out = b.add_state()?;
            for item in items {
                let end = emit(b, item, from)?;
                b.add_epsilon(end, out);
            }
            Ok(out)
        }
        AstKind::Star(child) => {
            let hub = b.add_state()?;
            b.add_epsilon(from, hub);
            let end = emit(b, child, hub)?;
            b.add_epsilon(end, hub);
            Ok(hub)
        }
        AstKind::Plus(child) => {
            let end = emit(b, child, from)?;
            let hub = b.add_state()?;
            b.add_epsilon(end, hub);
            let loop_end = emit(b, child, hub)?;
            b.add_epsilon(loop_end, hub);
            Ok(hub)
        }
        AstKind::Optional(child) => {
            let out = b.add_state()?;
            b.add_epsilon(from, out);
            let end = emit(b, child, from)?;
            b.add_epsilon(end, out);
            Ok(out)
        }
        AstKind::Group(child) => emit(b, child, from),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regex::parse;

    fn compile(pattern: &str) -> Automaton {
        compile_to_automaton(&parse(pattern).unwrap(), &CompileOptions::default()).unwrap()
    }

    fn syms(s: &str) -> Vec<u32> {
        s.bytes().map(u32::from).collect()
    }

    #[test]
    fn literal_word_is_single_path() {
        let a = compile("The");
        assert_eq!(a.num_states(), 4);
        assert_eq!(a.num_edges(), 3);
        assert!(a.accepts(&syms("The")));
        assert!(!a.accepts(&syms("Th")));
    }

    #[test]
    fn star_accepts_empty_and_loops() {
        let a = compile("a*");
        assert_eq!(a.num_states(), 1);
        assert!(a.accepts(&[]));
        assert!(a.accepts(&syms("aaaa")));
        assert!(!a.accepts(&syms("ab")));
    }

    #[test]
    fn alternation_then_literal_is_three_state_dfa() {
        // Brute-force derived: over {a,b,c} the language is exactly {ac, bc}.
        let a = compile("(a|b)c");
        assert_eq!(a.num_states(), 3);
        let mut accepted = Vec::new();
        let alphabet = *b"abc";
        for len in 0..=3usize {
            let mut idx = vec![0usize; len];
            loop {
                let s: Vec<u32> = idx.iter().map(|&i| u32::from(alphabet[i])).collect();
                if a.accepts(&s) {
                    accepted.push(s.clone());
                }
                let mut carry = true;
                for slot in idx.iter_mut() {
                    *slot += 1;
                    if *slot == alphabet.len() {
                        *slot = 0;
                    } else {
                        carry = false;
                        break;
                    }
                }
                if carry {
                    break;
                }
            }
        }
        assert_eq!(accepted, vec![syms("ac"), syms("bc")]);
    }

    #[test]
    fn plus_requires_one() {
        let a = compile("a+");
        assert!(!a.accepts(&[]));
        assert!(a.accepts(&syms("a")));
        assert!(a.accepts(&syms("aaa")));
    }

    #[test]
    fn result_is_deterministic_and_minimal() {
        let a = compile("a|a|a|(a|a)");
        assert!(a.is_deterministic());
        assert_eq!(a.num_states(), 2);
    }

    #[test]
    fn unicode_literal_matches_its_utf8_bytes() {
        let a = compile("é?");
        assert!(a.accepts(&[]));
        let bytes: Vec<u32> = "é".bytes().map(u32::from).collect();
        assert!(a.accepts(&bytes));
        assert!(!a.accepts(&bytes[..1]));
    }

    #[test]
    fn state_cap_is_enforced() {
        let opts = CompileOptions { max_states: 3 };
        let result = compile_to_automaton(&parse("abcdef").unwrap(), &opts);
        assert!(matches!(
            result,
            Err(AutomatonError::StateCapExceeded { .. })
        ));
    }
}
