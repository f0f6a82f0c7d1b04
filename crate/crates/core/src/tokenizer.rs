//! Byte-level BPE vocabulary: canonical encoding, decoding, training, and a
//! brute-force all-tokenizations oracle.
//!
//! Ids `0..=255` are always the single-byte tokens. Merge `i` in the merge
//! list produces token id `256 + i`. The end-of-sequence token is the unique
//! token with an empty byte string and always holds the highest id. The
//! on-disk form is two plain-text files: a tokens file with one
//! `id<TAB>hex-bytes` line per token (the EOS line has an empty hex field)
//! and a merges file with one `left<TAB>right` id pair per line, in merge
//! order.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

pub type TokenId = u32;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("unknown token id {0}")]
    UnknownToken(TokenId),
    #[error("vocabulary size must be at least 256, got {0}")]
    TooSmall(usize),
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("string length {len} exceeds the all-tokenizations limit {limit}")]
    OracleLimit { len: usize, limit: usize },
    #[error("malformed vocabulary file at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<Vec<u8>>,
    merges: Vec<(TokenId, TokenId)>,
    eos: TokenId,
    /// First token id of each byte string, for segmentation lookups.
    by_bytes: HashMap<Vec<u8>, Vec<TokenId>>,
}

impl Vocabulary {
    /// Byte-only vocabulary: 256 single-byte tokens plus EOS.
    pub fn byte_level() -> Self {
        Vocabulary::from_merges(vec![])
    }

    /// Builds a vocabulary from an ordered merge list. Merge `i` must refer
    /// to ids below `256 + i`.
    pub fn from_merges(merges: Vec<(TokenId, TokenId)>) -> Self {
        let mut tokens: Vec<Vec<u8>> = (0u16..256).map(|b| vec![b as u8]).collect();
        for &(l, r) in &merges {
            let mut bytes = tokens[l as usize].clone();
            bytes.extend_from_slice(&tokens[r as usize]);
            tokens.push(bytes);
        }
        tokens.push(vec![]); // EOS
        let eos = (tokens.len() - 1) as TokenId;
        let by_bytes = index_bytes(&tokens, eos);
        Vocabulary {
            tokens,
            merges,
            eos,
            by_bytes,
        }
    }

    /// Builds a vocabulary from explicit byte strings for tests and tools.
    /// The 256 byte tokens and EOS are appended around the given extras, and
    /// a synthetic merge list is not derived: `encode` falls back to
    /// left-to-right longest match when the merge list is empty and extras
    /// exist.
    pub fn with_extra_tokens<I, S>(extras: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        let mut tokens: Vec<Vec<u8>> = (0u16..256).map(|b| vec![b as u8]).collect();
        for e in extras {
            tokens.push(e.as_ref().to_vec());
        }
        tokens.push(vec![]);
        let eos = (tokens.len() - 1) as TokenId;
        let by_bytes = index_bytes(&tokens, eos);
        Vocabulary {
            tokens,
            merges: vec![],
            eos,
            by_bytes,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    pub fn token_bytes(&self, id: TokenId) -> Result<&[u8], VocabError> {
        self.tokens
            .get(id as usize)
            .map(Vec::as_slice)
            .ok_or(VocabError::UnknownToken(id))
    }

    /// Ids of all tokens whose byte string equals `bytes`.
    pub fn ids_for_bytes(&self, bytes: &[u8]) -> &[TokenId] {
        self.by_bytes.get(bytes).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Iterator over `(id, bytes)` for every non-special token.
    pub fn iter_tokens(&self) -> impl Iterator<Item = (TokenId, &[u8])> {
        let eos = self.eos;
        self.tokens
            .iter()
            .enumerate()
            .map(|(id, b)| (id as TokenId, b.as_slice()))
            .filter(move |&(id, _)| id != eos)
    }

    /// Display form of a token: decoded text with the space marker, control
    /// bytes hex-escaped. Used by DOT dumps and reports.
    pub fn render_token(&self, id: TokenId) -> String {
        if id == self.eos {
            return "<eos>".to_string();
        }
        let mut out = String::new();
        for &b in self.tokens.get(id as usize).map(Vec::as_slice).unwrap_or(&[]) {
            match b {
                b' ' => out.push('\u{0120}'),
                0x21..=0x7e => out.push(b as char),
                _ => {
                    let _ = write!(out, "\\x{b:02x}");
                }
            }
        }
        out
    }

    /// Canonical encoding: greedy BPE merging. At each round the present
    /// pair with the lowest merge rank is merged at every occurrence,
    /// scanning left to right.
    pub fn encode(&self, input: &[u8]) -> Vec<TokenId> {
        let mut seq: Vec<TokenId> = input.iter().map(|&b| TokenId::from(b)).collect();
        if self.merges.is_empty() {
            if self.tokens.len() > 257 {
                // Hand-built vocabulary without merge ranks: canonical form
                // is the leftmost-longest segmentation.
                return self.encode_longest_match(input);
            }
            return seq;
        }
        let rank: HashMap<(TokenId, TokenId), usize> = self
            .merges
            .iter()
            .enumerate()
            .map(|(i, &pair)| (pair, i))
            .collect();
        loop {
            let mut best: Option<(usize, (TokenId, TokenId))> = None;
            for w in seq.windows(2) {
                if let Some(&r) = rank.get(&(w[0], w[1])) {
                    if best.is_none_or(|(br, _)| r < br) {
                        best = Some((r, (w[0], w[1])));
                    }
                }
            }
            let Some((r, (l, rgt))) = best else { break };
            let merged = 256 + r as TokenId;
            let mut out = Vec::with_capacity(seq.len());
            let mut i = 0;
            while i < seq.len() {
                if i + 1 < seq.len() && seq[i] == l && seq[i + 1] == rgt {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(seq[i]);
                    i += 1;
                }
            }
            seq = out;
        }
        seq
    }

    fn encode_longest_match(&self, input: &[u8]) -> Vec<TokenId> {
        let max_len = self.tokens.iter().map(Vec::len).max().unwrap_or(1);
        let mut out = Vec::new();
        let mut at = 0;
        while at < input.len() {
            let mut take = 1;
            let mut id = TokenId::from(input[at]);
            let end = (at + max_len).min(input.len());
            for len in (1..=end - at).rev() {
                let ids = self.ids_for_bytes(&input[at..at + len]);
                if let Some(&first) = ids.first() {
                    take = len;
                    id = first;
                    break;
                }
            }
            out.push(id);
            at += take;
        }
        out
    }

    /// Concatenation of token byte strings. EOS decodes to nothing.
    pub fn decode(&self, tokens: &[TokenId]) -> Result<Vec<u8>, VocabError> {
        let mut out = Vec::new();
        for &t in tokens {
            out.extend_from_slice(self.token_bytes(t)?);
        }
        Ok(out)
    }

    /// Every token sequence that decodes to `input`, by exhaustive
    /// segmentation, in lexicographic token-id order.
    pub fn all_tokenizations(
        &self,
        input: &[u8],
        limit: usize,
    ) -> Result<Vec<Vec<TokenId>>, VocabError> {
        if input.len() > limit {
            return Err(VocabError::OracleLimit {
                len: input.len(),
                limit,
            });
        }
        let max_len = self.tokens.iter().map(Vec::len).max().unwrap_or(1);
        // suffix_ok[i]: some segmentation covers input[i..].
        let n = input.len();
        let mut suffix_ok = vec![false; n + 1];
        suffix_ok[n] = true;
        for i in (0..n).rev() {
            for len in 1..=max_len.min(n - i) {
                if suffix_ok[i + len] && !self.ids_for_bytes(&input[i..i + len]).is_empty() {
                    suffix_ok[i] = true;
                    break;
                }
            }
        }
        let mut out = Vec::new();
        let mut current = Vec::new();
        segment(self, input, 0, &suffix_ok, max_len, &mut current, &mut out);
        out.sort();
        Ok(out)
    }

    /// Saves the tokens and merges files into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), VocabError> {
        std::fs::create_dir_all(dir)?;
        let mut tokens_text = String::new();
        for (id, bytes) in self.tokens.iter().enumerate() {
            let hex: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
            let _ = writeln!(tokens_text, "{id}\t{hex}");
        }
        std::fs::write(dir.join("tokens.txt"), tokens_text)?;
        let mut merges_text = String::new();
        for &(l, r) in &self.merges {
            let _ = writeln!(merges_text, "{l}\t{r}");
        }
        std::fs::write(dir.join("merges.txt"), merges_text)?;
        Ok(())
    }

    /// Loads a vocabulary saved by [`Vocabulary::save`].
    pub fn load(dir: &Path) -> Result<Self, VocabError> {
        let tokens_text = std::fs::read_to_string(dir.join("tokens.txt"))?;
        let merges_text = std::fs::read_to_string(dir.join("merges.txt"))?;
        let mut tokens: Vec<Vec<u8>> = Vec::new();
        let mut eos = None;
        for (idx, line) in tokens_text.lines().enumerate() {
            let lineno = idx + 1;
            if line.is_empty() {
                continue;
            }
            let (id_text, hex) = line.split_once('\t').ok_or_else(|| VocabError::Malformed {
                line: lineno,
                reason: "expected id<TAB>hex".into(),
            })?;
            let id: usize = id_text.parse().map_err(|_| VocabError::Malformed {
                line: lineno,
                reason: "bad token id".into(),
            })?;
            if id != tokens.len() {
                return Err(VocabError::Malformed {
                    line: lineno,
                    reason: format!("token ids must be dense; expected {}", tokens.len()),
                });
            }
            let bytes = decode_hex(hex).ok_or_else(|| VocabError::Malformed {
                line: lineno,
                reason: "bad hex bytes".into(),
            })?;
            if bytes.is_empty() {
                if eos.is_some() {
                    return Err(VocabError::Malformed {
                        line: lineno,
                        reason: "multiple empty (EOS) tokens".into(),
                    });
                }
                eos = Some(id as TokenId);
            }
            tokens.push(bytes);
        }
        let eos = eos.ok_or(VocabError::Malformed {
            line: 0,
            reason: "no EOS (empty) token present".into(),
        })?;
        let mut merges = Vec::new();
        for (idx, line) in merges_text.lines().enumerate() {
            let lineno = idx + 1;
            if line.is_empty() {
                continue;
            }
            let (l, r) = line.split_once('\t').ok_or_else(|| VocabError::Malformed {
                line: lineno,
                reason: "expected left<TAB>right".into(),
            })?;
            let l: TokenId = l.parse().map_err(|_| VocabError::Malformed {
                line: lineno,
                reason: "bad merge id".into(),
            })?;
            let r: TokenId = r.parse().map_err(|_| VocabError::Malformed {
                line: lineno,
                reason: "bad merge id".into(),
            })?;
            merges.push((l, r));
        }
        let by_bytes = index_bytes(&tokens, eos);
        Ok(Vocabulary {
            tokens,
            merges,
            eos,
            by_bytes,
        })
    }
}

fn index_bytes(tokens: &[Vec<u8>], eos: TokenId) -> HashMap<Vec<u8>, Vec<TokenId>> {
    let mut map: HashMap<Vec<u8>, Vec<TokenId>> = HashMap::new();
    for (id, bytes) in tokens.iter().enumerate() {
        if id as TokenId == eos {
            continue;
        }
        map.entry(bytes.clone()).or_default().push(id as TokenId);
    }
    map
}

fn decode_hex(hex: &str) -> Option<Vec<u8>> {
    if !hex.len().is_multiple_of(2) {
        return None;
    }
    hex.as_bytes()
        .chunks(2)
        .map(|pair| {
            let text = std::str::from_utf8(pair).ok()?;
            u8::from_str_radix(text, 16).ok()
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn segment(
    v: &Vocabulary,
    input: &[u8],
    at: usize,
    suffix_ok: &[bool],
    max_len: usize,
    current: &mut Vec<TokenId>,
    out: &mut Vec<Vec<TokenId>>,
) {
    if at == input.len() {
        out.push(current.clone());
        return;
    }
    for len in 1..=max_len.min(input.len() - at) {
        if !suffix_ok[at + len] {
            continue;
        }
        for &id in v.ids_for_bytes(&input[at..at + len]) {
            current.push(id);
            segment(v, input, at + len, suffix_ok, max_len, current, out);
            current.pop();
        }
    }
}

/// Splits a line into pre-token chunks: a space byte always starts a new
/// chunk, so merges stay within a word plus its leading space (the usual
/// space-marker convention) and never bridge two words.
fn chunk_line(line: &str) -> Vec<Vec<TokenId>> {
    let mut chunks: Vec<Vec<TokenId>> = Vec::new();
    for b in line.bytes() {
        if b == b' ' || chunks.is_empty() {
            chunks.push(Vec::new());
        }
        chunks.last_mut().expect("pushed above").push(TokenId::from(b));
    }
    chunks
}

/// Greedy BPE training: repeatedly merge the most frequent adjacent token
/// pair until the vocabulary holds `k` byte-or-merge tokens (EOS is added on
/// top), stopping early when no pair repeats. Ties break on the
/// lexicographically smallest `(left, right)` id pair, so training is
/// deterministic. Pairs are counted within space-led chunks of each line.
pub fn train_bpe(corpus: &str, k: usize) -> Result<Vocabulary, VocabError> {
    if k < 256 {
        return Err(VocabError::TooSmall(k));
    }
    if corpus.is_empty() {
        return Err(VocabError::EmptyCorpus);
    }
    let mut chunks: Vec<Vec<TokenId>> = corpus
        .lines()
        .filter(|l| !l.is_empty())
        .flat_map(chunk_line)
        .collect();
    if chunks.is_empty() {
        return Err(VocabError::EmptyCorpus);
    }
    let mut tokens: Vec<Vec<u8>> = (0u16..256).map(|b| vec![b as u8]).collect();
    let mut seen: HashMap<Vec<u8>, ()> = tokens.iter().map(|t| (t.clone(), ())).collect();
    let mut merges: Vec<(TokenId, TokenId)> = Vec::new();
    while tokens.len() < k {
        let mut counts: HashMap<(TokenId, TokenId), u64> = HashMap::new();
        for chunk in &chunks {
            for w in chunk.windows(2) {
                *counts.entry((w[0], w[1])).or_insert(0) += 1;
            }
        }
        // Most frequent pair, ties by smallest pair; skip pairs whose merged
        // byte string already exists as a token.
        let mut candidates: Vec<(&(TokenId, TokenId), &u64)> = counts.iter().collect();
        candidates.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        let mut chosen = None;
        for (&pair, &count) in candidates {
            if count < 2 {
                break;
            }
            let mut bytes = tokens[pair.0 as usize].clone();
            bytes.extend_from_slice(&tokens[pair.1 as usize]);
            if !seen.contains_key(&bytes) {
                chosen = Some((pair, bytes));
                break;
            }
        }
        let Some(((l, r), bytes)) = chosen else { break };
        let merged = tokens.len() as TokenId;
        seen.insert(bytes.clone(), ());
        tokens.push(bytes);
        merges.push((l, r));
        for chunk in &mut chunks {
            let mut out = Vec::with_capacity(chunk.len());
            let mut i = 0;
            while i < chunk.len() {
                if i + 1 < chunk.len() && chunk[i] == l && chunk[i + 1] == r {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(chunk[i]);
                    i += 1;
                }
            }
            *chunk = out;
        }
    }
    Ok(Vocabulary::from_merges(merges))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn the_vocab() -> Vocabulary {
        // {T, h, e, Th, he, The} on top of the byte tokens.
        // T=84 h=104 e=101; merges: (T,h)->Th=256, (h,e)->he=257,
        // (Th,e)->The=258.
        Vocabulary::from_merges(vec![(84, 104), (104, 101), (256, 101)])
    }

    #[test]
    fn encode_prefers_full_merge() {
        let v = the_vocab();
        assert_eq!(v.encode(b"The"), vec![258]);
    }

    #[test]
    fn encode_empty_is_empty() {
        let v = the_vocab();
        assert_eq!(v.encode(b""), Vec::<TokenId>::new());
    }

    #[test]
    fn encode_applies_merges_in_order() {
        // merges (a,b)->ab then (ab,ab)->abab.
        let v = Vocabulary::from_merges(vec![(97, 98), (256, 256)]);
        assert_eq!(v.encode(b"abab"), vec![257]);
    }

    #[test]
    fn decode_concatenates() {
        let v = the_vocab();
        assert_eq!(v.decode(&[84, 104, 101]).unwrap(), b"The".to_vec());
        assert_eq!(v.decode(&[256, 101]).unwrap(), b"The".to_vec());
        assert_eq!(v.decode(&[]).unwrap(), Vec::<u8>::new());
        assert!(v.decode(&[9999]).is_err());
    }

    #[test]
    fn four_tokenizations_of_the() {
        let v = the_vocab();
        let all = v.all_tokenizations(b"The", 16).unwrap();
        assert_eq!(all.len(), 4);
        assert!(all.contains(&vec![84, 104, 101]));
        assert!(all.contains(&vec![256, 101]));
        assert!(all.contains(&vec![84, 257]));
        assert!(all.contains(&vec![258]));
    }

    #[test]
    fn single_byte_only_tokenization() {
        let v = Vocabulary::byte_level();
        let all = v.all_tokenizations(b"ab", 16).unwrap();
        assert_eq!(all, vec![vec![97, 98]]);
    }

    #[test]
    fn tokenization_count_grows_as_powers_of_two() {
        // Every run of "a" up to length 8 is a token, so segmentations of
        // "a" * n are exactly the 2^(n-1) compositions of n.
        let v = Vocabulary::from_merges(vec![
            (97, 97),   // aa
            (256, 97),  // aaa
            (257, 97),  // aaaa
            (258, 97),  // aaaaa
            (259, 97),  // 6
            (260, 97),  // 7
            (261, 97),  // 8
        ]);
        for n in 1..=8 {
            let s = vec![b'a'; n];
            let count = v.all_tokenizations(&s, 16).unwrap().len();
            assert_eq!(count, 1 << (n - 1), "n={n}");
        }
    }

    #[test]
    fn oracle_limit_is_enforced() {
        let v = Vocabulary::byte_level();
        assert!(matches!(
            v.all_tokenizations(&[b'a'; 17], 16),
            Err(VocabError::OracleLimit { .. })
        ));
    }

    #[test]
    fn canonical_is_among_all_tokenizations() {
        let v = the_vocab();
        for s in [&b"The"[..], b"These", b"hehe", b"TTh"] {
            let all = v.all_tokenizations(s, 16).unwrap();
            assert!(all.contains(&v.encode(s)), "{s:?}");
        }
    }

    #[test]
    fn train_on_repeated_byte() {
        let v = train_bpe("aaaa", 257).unwrap();
        assert_eq!(v.merges(), &[(97, 97)]);
    }

    #[test]
    fn train_byte_only() {
        let v = train_bpe("whatever text", 256).unwrap();
        assert!(v.merges().is_empty());
        assert_eq!(v.len(), 257); // 256 bytes + EOS
    }

    #[test]
    fn train_finds_frequent_word() {
        let v = train_bpe("the the the", 260).unwrap();
        let has_the = v.iter_tokens().any(|(_, bytes)| bytes == b"the");
        assert!(has_the, "merges: {:?}", v.merges());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = std::env::temp_dir().join(format!("lmre-vocab-{}", std::process::id()));
        let v = train_bpe("the quick brown fox the quick", 280).unwrap();
        v.save(&dir).unwrap();
        let back = Vocabulary::load(&dir).unwrap();
        assert_eq!(v, back);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn round_trip_decode_encode() {
        let v = train_bpe("hello world hello world", 270).unwrap();
        for s in [&b"hello"[..], b"world hello", b"xyz", b""] {
            assert_eq!(v.decode(&v.encode(s)).unwrap(), s.to_vec());
        }
    }
}
