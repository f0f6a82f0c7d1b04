//! Deterministic generators for randomized test suites: finite-language
//! patterns, toy merge vocabularies, and random string sets. Kept in the
//! library so integration suites and downstream crates can share them; not
//! part of the stable API.

use rand::rngs::StdRng;
use rand::Rng;

/// Configuration for [`random_pattern`].
#[derive(Debug, Clone)]
pub struct PatternConfig {
    /// Symbols literals are drawn from.
    pub alphabet: Vec<u8>,
    pub max_depth: usize,
    /// Allow `*` / `+` (makes languages infinite).
    pub allow_repeats: bool,
}

impl Default for PatternConfig {
    fn default() -> Self {
        PatternConfig {
            alphabet: b"abcd".to_vec(),
            max_depth: 4,
            allow_repeats: false,
        }
    }
}

/// Generates a random pattern string. With `allow_repeats` off the denoted
/// language is finite.
pub fn random_pattern(rng: &mut StdRng, config: &PatternConfig) -> String {
    let mut out = String::new();
    emit(rng, config, config.max_depth, &mut out);
    out
}

fn emit(rng: &mut StdRng, config: &PatternConfig, depth: usize, out: &mut String) {
    let literal = |rng: &mut StdRng, out: &mut String| {
        let b = config.alphabet[rng.gen_range(0..config.alphabet.len())];
        out.push(b as char);
    };
    if depth == 0 {
        literal(rng, out);
        return;
    }
    match rng.gen_range(0..10) {
        0..=2 => literal(rng, out),
        3..=4 => {
            // Concatenation of 2-3 pieces.
            for _ in 0..rng.gen_range(2..=3) {
                emit(rng, config, depth - 1, out);
            }
        }
        5..=6 => {
            // Grouped alternation of 2-3 branches.
            out.push('(');
            let branches = rng.gen_range(2..=3);
            for i in 0..branches {
                if i > 0 {
                    out.push('|');
                }
                emit(rng, config, depth - 1, out);
            }
            out.push(')');
        }
        7 => {
            out.push('(');
            emit(rng, config, depth - 1, out);
            out.push_str(")?");
        }
        8 => {
            // Small class.
            let mut set: Vec<u8> = config.alphabet.clone();
            let keep = rng.gen_range(2..=set.len());
            while set.len() > keep {
                let drop = rng.gen_range(0..set.len());
                set.remove(drop);
            }
            out.push('[');
            for b in set {
                out.push(b as char);
            }
            out.push(']');
        }
        _ => {
            out.push('(');
            emit(rng, config, depth - 1, out);
            if config.allow_repeats {
                out.push_str(match rng.gen_range(0..3) {
                    0 => ")*",
                    1 => ")+",
                    _ => "){1,3}",
                });
            } else {
                out.push_str(match rng.gen_range(0..2) {
                    0 => "){1,2}",
                    _ => "){1,3}",
                });
            }
        }
    }
}

/// Builds a random toy vocabulary by stacking merges of random existing
/// token pairs over the alphabet, skipping merges that would duplicate an
/// existing byte string.
pub fn random_vocab(rng: &mut StdRng, alphabet: &[u8], merge_count: usize) -> crate::Vocabulary {
    let mut merges: Vec<(u32, u32)> = Vec::new();
    let mut byte_strings: Vec<Vec<u8>> = (0u16..256).map(|b| vec![b as u8]).collect();
    let mut existing: std::collections::HashSet<Vec<u8>> =
        byte_strings.iter().cloned().collect();
    let mut candidates: Vec<u32> = alphabet.iter().map(|&b| u32::from(b)).collect();
    let mut attempts = 0;
    while merges.len() < merge_count && attempts < merge_count * 20 {
        attempts += 1;
        let l = candidates[rng.gen_range(0..candidates.len())];
        let r = candidates[rng.gen_range(0..candidates.len())];
        let mut bytes = byte_strings[l as usize].clone();
        bytes.extend_from_slice(&byte_strings[r as usize]);
        if bytes.len() > 6 || !existing.insert(bytes.clone()) {
            continue;
        }
        let id = byte_strings.len() as u32;
        byte_strings.push(bytes);
        merges.push((l, r));
        candidates.push(id);
    }
    crate::Vocabulary::from_merges(merges)
}

/// A random set of distinct strings over the alphabet.
pub fn random_string_set(
    rng: &mut StdRng,
    alphabet: &[u8],
    count: usize,
    max_len: usize,
) -> Vec<Vec<u8>> {
    let mut set = std::collections::BTreeSet::new();
    let mut attempts = 0;
    while set.len() < count && attempts < count * 50 {
        attempts += 1;
        let len = rng.gen_range(1..=max_len);
        let s: Vec<u8> = (0..len)
            .map(|_| alphabet[rng.gen_range(0..alphabet.len())])
            .collect();
        set.insert(s);
    }
    set.into_iter().collect()
}
