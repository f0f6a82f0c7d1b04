//! Recursive-descent pattern parser producing a [`RegexAst`].

use thiserror::Error;

use super::{AstKind, RegexAst, Span};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("syntax error at byte {offset}: {reason}")]
pub struct ParseError {
    pub offset: usize,
    pub reason: String,
}

fn err<T>(offset: usize, reason: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        offset,
        reason: reason.into(),
    })
}

const REPEAT_LIMIT: u32 = 4096;

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

/// Parses a UTF-8 pattern into an AST. The empty pattern denotes the empty
/// string.
pub fn parse(pattern: &str) -> Result<RegexAst, ParseError> {
    let mut p = Parser {
        bytes: pattern.as_bytes(),
        pos: 0,
    };
    let ast = p.alternation()?;
    if p.pos != p.bytes.len() {
        return err(p.pos, "unbalanced ')'");
    }
    Ok(ast)
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.peek();
        if b.is_some() {
            self.pos += 1;
        }
        b
    }

    fn alternation(&mut self) -> Result<RegexAst, ParseError> {
        let start = self.pos;
        let mut branches = vec![self.concat()?];
        while self.peek() == Some(b'|') {
            self.bump();
            branches.push(self.concat()?);
        }
        if branches.len() == 1 {
            Ok(branches.pop().unwrap())
        } else {
            let span = Span {
                start,
                end: self.pos,
            };
            Ok(RegexAst::new(AstKind::Alternation(branches), span))
        }
    }

    fn concat(&mut self) -> Result<RegexAst, ParseError> {
        let start = self.pos;
        let mut items = Vec::new();
        while let Some(b) = self.peek() {
            if b == b'|' || b == b')' {
                break;
            }
            items.push(self.repeat()?);
        }
        let span = Span {
            start,
            end: self.pos,
        };
        match items.len() {
            0 => Ok(RegexAst::new(AstKind::Epsilon, span)),
            1 => Ok(items.pop().unwrap()),
            _ => Ok(RegexAst::new(AstKind::Concat(items), span)),
        }
    }

    fn repeat(&mut self) -> Result<RegexAst, ParseError> {
        let start = self.pos;
        let mut node = self.atom()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.bump();
                    node = RegexAst::new(
                        AstKind::Star(Box::new(node)),
                        Span {
                            start,
                            end: self.pos,
                        },
                    );
                }
                Some(b'+') => {
                    self.bump();
                    node = RegexAst::new(
                        AstKind::Plus(Box::new(node)),
                        Span {
                            start,
                            end: self.pos,
                        },
                    );
                }
                Some(b'?') => {
                    self.bump();
                    node = RegexAst::new(
                        AstKind::Optional(Box::new(node)),
                        Span {
                            start,
                            end: self.pos,
                        },
                    );
                }
                Some(b'{') => {
                    node = self.bounded_repeat(node, start)?;
                }
                _ => break,
            }
        }
        Ok(node)
    }

    /// Desugars `{m}`, `{m,}`, `{m,n}` into concatenation, star, and
    /// optionals so the automaton layer never sees counters.
    fn bounded_repeat(&mut self, node: RegexAst, start: usize) -> Result<RegexAst, ParseError> {
        let brace = self.pos;
        self.bump(); // '{'
        let min = self.number(brace)?;
        let max = match self.peek() {
            Some(b'}') => Some(min),
            Some(b',') => {
                self.bump();
                if self.peek() == Some(b'}') {
                    None
                } else {
                    Some(self.number(brace)?)
                }
            }
            _ => return err(self.pos, "expected ',' or '}' in repetition"),
        };
        if self.bump() != Some(b'}') {
            return err(self.pos, "unterminated repetition");
        }
        if let Some(max) = max {
            if max < min {
                return err(brace, "repetition maximum below minimum");
            }
        }
        let span = Span {
            start,
            end: self.pos,
        };
        let mut items: Vec<RegexAst> = Vec::new();
        for _ in 0..min {
            items.push(node.clone());
        }
        match max {
            Some(max) => {
                for _ in min..max {
                    items.push(RegexAst::new(
                        AstKind::Optional(Box::new(node.clone())),
                        span,
                    ));
                }
            }
            None => {
                items.push(RegexAst::new(AstKind::Star(Box::new(node)), span));
            }
        }
        Ok(match items.len() {
            0 => RegexAst::new(AstKind::Epsilon, span),
            1 => items.pop().unwrap(),
            _ => RegexAst::new(AstKind::Concat(items), span),
        })
    }

    fn number(&mut self, context: usize) -> Result<u32, ParseError> {
        let start = self.pos;
        let mut value: u32 = 0;
        while let Some(b @ b'0'..=b'9') = self.peek() {
            self.bump();
            value = value
                .saturating_mul(10)
                .saturating_add(u32::from(b - b'0'));
        }
        if self.pos == start {
            return err(context, "expected a count in repetition");
        }
        if value > REPEAT_LIMIT {
            return err(start, format!("repetition count exceeds {REPEAT_LIMIT}"));
        }
        Ok(value)
    }

    fn atom(&mut self) -> Result<RegexAst, ParseError> {
        let start = self.pos;
        match self.peek() {
            None => err(start, "expected an atom"),
            Some(b'(') => {
                self.bump();
                let inner = self.alternation()?;
                if self.bump() != Some(b')') {
                    return err(start, "unbalanced '('");
                }
                Ok(RegexAst::new(
                    AstKind::Group(Box::new(inner)),
                    Span {
                        start,
                        end: self.pos,
                    },
                ))
            }
            Some(b'[') => self.class(),
            Some(b'.') => {
                self.bump();
                let set: Vec<u8> = (0u8..=255).filter(|&b| b != b'\n').collect();
                Ok(RegexAst::new(
                    AstKind::Class(set),
                    Span {
                        start,
                        end: self.pos,
                    },
                ))
            }
            Some(b'*') | Some(b'+') | Some(b'?') => err(start, "dangling repetition operator"),
            Some(b')') => err(start, "unbalanced ')'"),
            Some(b'\\') => {
                self.bump();
                let b = self.escaped(start)?;
                Ok(RegexAst::new(
                    AstKind::Literal(b),
                    Span {
                        start,
                        end: self.pos,
                    },
                ))
            }
            Some(b) if b < 0x80 => {
                self.bump();
                Ok(RegexAst::new(
                    AstKind::Literal(b),
                    Span {
                        start,
                        end: self.pos,
                    },
                ))
            }
            Some(_) => {
                // Multi-byte UTF-8 scalar: emit its byte run as a unit so a
                // following quantifier applies to the whole character.
                let rest = &self.bytes[self.pos..];
                let text = std::str::from_utf8(rest).map_err(|_| ParseError {
                    offset: start,
                    reason: "invalid UTF-8 in pattern".into(),
                })?;
                let c = text.chars().next().unwrap();
                let mut buf = [0u8; 4];
                let encoded = c.encode_utf8(&mut buf).as_bytes().to_vec();
                self.pos += encoded.len();
                let span = Span {
                    start,
                    end: self.pos,
                };
                let items = encoded
                    .into_iter()
                    .map(|b| RegexAst::new(AstKind::Literal(b), span))
                    .collect();
                Ok(RegexAst::new(AstKind::Group(Box::new(RegexAst::new(
                    AstKind::Concat(items),
                    span,
                ))), span))
            }
        }
    }

    fn escaped(&mut self, start: usize) -> Result<u8, ParseError> {
        match self.bump() {
            None => err(start, "dangling escape"),
            Some(b'n') => Ok(b'\n'),
            Some(b't') => Ok(b'\t'),
            Some(b'r') => Ok(b'\r'),
            Some(b'0') => Ok(0),
            Some(b) if b.is_ascii_alphanumeric() => {
                err(start, format!("unknown escape '\\{}'", b as char))
            }
            Some(b) => Ok(b),
        }
    }

    fn class(&mut self) -> Result<RegexAst, ParseError> {
        let start = self.pos;
        self.bump(); // '['
        let negated = if self.peek() == Some(b'^') {
            self.bump();
            true
        } else {
            false
        };
        let mut set = [false; 256];
        let mut any = false;
        loop {
            let item_at = self.pos;
            let b = match self.peek() {
                None => return err(start, "unterminated class"),
                Some(b']') if any || negated => {
                    self.bump();
                    break;
                }
                Some(b']') => return err(start, "empty class"),
                Some(b'\\') => {
                    self.bump();
                    self.escaped(item_at)?
                }
                Some(b) if b < 0x80 => {
                    self.bump();
                    b
                }
                Some(_) => return err(item_at, "non-ASCII character in class"),
            };
            // Range if the next byte is '-' and it is not the closing one.
            if self.peek() == Some(b'-') && self.bytes.get(self.pos + 1) != Some(&b']') {
                self.bump();
                let hi_at = self.pos;
                let hi = match self.peek() {
                    None => return err(start, "unterminated class"),
                    Some(b'\\') => {
                        self.bump();
                        self.escaped(hi_at)?
                    }
                    Some(b) if b < 0x80 => {
                        self.bump();
                        b
                    }
                    Some(_) => return err(hi_at, "non-ASCII character in class"),
                };
                if hi < b {
                    return err(item_at, "class range out of order");
                }
                for v in b..=hi {
                    set[v as usize] = true;
                }
            } else {
                set[b as usize] = true;
            }
            any = true;
        }
        if negated {
            for v in set.iter_mut() {
                *v = !*v;
            }
        }
        let bytes: Vec<u8> = (0u16..256)
            .filter(|&v| set[v as usize])
            .map(|v| v as u8)
            .collect();
        if bytes.is_empty() {
            return err(start, "empty class");
        }
        Ok(RegexAst::new(
            AstKind::Class(bytes),
            Span {
                start,
                end: self.pos,
            },
        ))
    }
}
