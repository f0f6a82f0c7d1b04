//! Reference implementations used as independent oracles by the test
//! suites. These deliberately share no code with the automaton pipeline:
//! the matcher interprets the AST directly and the edit distance is the
//! classic dynamic program.

use std::collections::BTreeSet;

use crate::regex::{AstKind, RegexAst};

/// Direct recursive interpretation of the AST over a byte string.
pub fn regex_match(ast: &RegexAst, input: &[u8]) -> bool {
    positions(ast, input, &BTreeSet::from([0])).contains(&input.len())
}

/// The set of end positions reachable by matching `ast` starting from any
/// position in `starts`.
fn positions(ast: &RegexAst, input: &[u8], starts: &BTreeSet<usize>) -> BTreeSet<usize> {
    match &ast.kind {
        AstKind::Literal(b) => starts
            .iter()
            .filter(|&&p| input.get(p) == Some(b))
            .map(|&p| p + 1)
            .collect(),
        AstKind::Epsilon => starts.clone(),
        AstKind::EmptySet => BTreeSet::new(),
        AstKind::Class(set) => starts
            .iter()
            .filter(|&&p| input.get(p).is_some_and(|b| set.contains(b)))
            .map(|&p| p + 1)
            .collect(),
        AstKind::Concat(items) => {
            let mut at = starts.clone();
            for item in items {
                at = positions(item, input, &at);
                if at.is_empty() {
                    break;
                }
            }
            at
        }
        AstKind::Alternation(items) => items
            .iter()
            .flat_map(|item| positions(item, input, starts))
            .collect(),
        AstKind::Star(child) => closure(child, input, starts),
        AstKind::Plus(child) => {
            let once = positions(child, input, starts);
            closure(child, input, &once)
        }
        AstKind::Optional(child) => {
            let mut out = starts.clone();
            out.extend(positions(child, input, starts));
            out
        }
        AstKind::Group(child) => positions(child, input, starts),
    }
}

/// Fixpoint of zero or more repetitions of `child` from `starts`.
fn closure(child: &RegexAst, input: &[u8], starts: &BTreeSet<usize>) -> BTreeSet<usize> {
    let mut out = starts.clone();
    loop {
        let step = positions(child, input, &out);
        let before = out.len();
        out.extend(step);
        if out.len() == before {
            return out;
        }
    }
}

/// Levenshtein distance by the textbook dynamic program.
pub fn edit_distance(a: &[u8], b: &[u8]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut row = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        row[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            row[j + 1] = sub.min(prev[j + 1] + 1).min(row[j] + 1);
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

/// All strings over `alphabet` with length at most `max_len`, in
/// length-then-lexicographic order. Exponential; only for tiny oracles.
pub fn all_strings(alphabet: &[u8], max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    let mut frontier: Vec<Vec<u8>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::with_capacity(frontier.len() * alphabet.len());
        for s in &frontier {
            for &b in alphabet {
                let mut ext = s.clone();
                ext.push(b);
                next.push(ext);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}
