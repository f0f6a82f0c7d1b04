//! Graph-compiler oracle equivalence: the full token automaton accepts
//! exactly the union of all tokenizations of the byte language, and the
//! canonical automaton accepts exactly the canonical encodings.

use std::collections::BTreeSet;

use rand::rngs::StdRng;
use rand::SeedableRng;

use lmre::compiler::{compile_canonical, compile_full, CanonicalStrategy};
use lmre::regex::{compile_to_automaton, parse, CompileOptions};
use lmre::testkit::{random_pattern, random_vocab, PatternConfig};
use lmre::tokenizer::Vocabulary;
use lmre::DEFAULT_STATE_CAP;

fn cross_check(pattern: &str, vocab: &Vocabulary) {
    let ast = parse(pattern).unwrap();
    let byte_auto = compile_to_automaton(&ast, &CompileOptions::default()).unwrap();
    let enumeration = byte_auto.enumerate(1000);
    if !enumeration.exhausted || enumeration.strings.iter().any(|s| s.len() > 14) {
        return; // generator produced something too large; skip
    }
    let strings: Vec<Vec<u8>> = enumeration
        .strings
        .iter()
        .map(|s| s.iter().map(|&x| x as u8).collect())
        .collect();

    // Full automaton paths == union of all tokenizations.
    let full = compile_full(&byte_auto, vocab, DEFAULT_STATE_CAP).unwrap();
    let mut expected_paths: BTreeSet<Vec<u32>> = BTreeSet::new();
    for s in &strings {
        for t in vocab.all_tokenizations(s, 16).unwrap() {
            expected_paths.insert(t);
        }
    }
    let full_paths = full.automaton.enumerate(expected_paths.len() + 10);
    assert!(full_paths.exhausted, "pattern {pattern:?}");
    let full_set: BTreeSet<Vec<u32>> = full_paths.strings.into_iter().collect();
    assert_eq!(full_set, expected_paths, "full paths for {pattern:?}");

    // Canonical automaton paths == canonical encodings, one per string.
    let canonical = compile_canonical(
        &byte_auto,
        vocab,
        CanonicalStrategy::Enumerate,
        100_000,
        DEFAULT_STATE_CAP,
    )
    .unwrap();
    let expected_canonical: BTreeSet<Vec<u32>> =
        strings.iter().map(|s| vocab.encode(s)).collect();
    let canonical_paths = canonical.automaton.enumerate(expected_canonical.len() + 10);
    assert!(canonical_paths.exhausted);
    let canonical_set: BTreeSet<Vec<u32>> = canonical_paths.strings.into_iter().collect();
    assert_eq!(canonical_set, expected_canonical, "canonical for {pattern:?}");
    assert_eq!(
        canonical_set.len(),
        strings.len(),
        "canonical must be functional for {pattern:?}"
    );
    assert!(canonical_set.is_subset(&full_set));
}

#[test]
fn random_regexes_times_random_vocabularies() {
    let mut rng = StdRng::seed_from_u64(2024);
    let config = PatternConfig {
        alphabet: b"abcd".to_vec(),
        max_depth: 3,
        allow_repeats: false,
    };
    for round in 0..25 {
        let pattern = random_pattern(&mut rng, &config);
        let vocab = random_vocab(&mut rng, b"abcd", 3 + round % 8);
        cross_check(&pattern, &vocab);
    }
}

#[test]
fn byte_only_vocabulary_keeps_structure() {
    cross_check("(ab)|(ba)|(abab)", &Vocabulary::byte_level());
}

#[test]
fn paper_style_query_with_word_tokens() {
    // cat/dog query with a vocabulary holding word-level merges.
    let mut rng = StdRng::seed_from_u64(5);
    let vocab = random_vocab(&mut rng, b"catdog he", 10);
    cross_check("(cat)|(dog)", &vocab);
    cross_check("The ((cat)|(dog))", &vocab);
}
