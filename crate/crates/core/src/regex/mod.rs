//! Regular-expression front end: parsing patterns into an AST and compiling
//! the AST to a deterministic, minimized byte-level automaton.
//!
//! Supported syntax: literals, escapes, `|`, concatenation, `*`, `+`, `?`,
//! `(...)`, `[...]` classes with ranges and negation, `.` (any byte except
//! newline), and bounded repetition `{m}`, `{m,}`, `{m,n}` which is desugared
//! at parse time. The alphabet is bytes; non-ASCII literals compile to their
//! UTF-8 byte sequences. No backreferences, no lookaround.

mod compile;
mod parser;

pub use compile::{compile_to_automaton, CompileOptions};
pub use parser::{parse, ParseError};

/// Byte range of a node within the original pattern, for error reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegexAst {
    pub kind: AstKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AstKind {
    /// A single byte.
    Literal(u8),
    /// The empty string.
    Epsilon,
    /// The empty language.
    EmptySet,
    Concat(Vec<RegexAst>),
    Alternation(Vec<RegexAst>),
    Star(Box<RegexAst>),
    Plus(Box<RegexAst>),
    Optional(Box<RegexAst>),
    /// Nonempty set of byte alternatives (already range-expanded, sorted).
    Class(Vec<u8>),
    /// Explicit grouping; carries exactly one child.
    Group(Box<RegexAst>),
}

impl RegexAst {
    pub fn new(kind: AstKind, span: Span) -> Self {
        RegexAst { kind, span }
    }

    /// True when the pattern contains an unescaped `.` metacharacter, which
    /// is frequently intended as a literal dot in URL-style patterns. Front
    /// ends use this to warn.
    pub fn contains_any_byte_class(&self) -> bool {
        match &self.kind {
            AstKind::Class(set) => set.len() == 255 && !set.contains(&b'\n'),
            AstKind::Concat(items) | AstKind::Alternation(items) => {
                items.iter().any(RegexAst::contains_any_byte_class)
            }
            AstKind::Star(c) | AstKind::Plus(c) | AstKind::Optional(c) | AstKind::Group(c) => {
                c.contains_any_byte_class()
            }
            _ => false,
        }
    }
}

/// Escapes text so it parses back as a literal match for exactly that text.
pub fn escape_literal(text: &str) -> String {
    let mut out = String::new();
    for c in text.chars() {
        if matches!(
            c,
            '.' | '?' | '*' | '+' | '(' | ')' | '[' | ']' | '{' | '}' | '|' | '\\' | '^' | '$'
        ) {
            out.push('\\');
        }
        out.push(c);
    }
    out
}
