//! Property tests for the automaton algebra and the tokenizer, checked
//! against brute-force set semantics.

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

use lmre::automaton::{AlphabetTag, Automaton, Symbol};
use lmre::reference::all_strings;
use lmre::testkit::random_string_set;
use lmre::tokenizer::{train_bpe, Vocabulary};
use lmre::DEFAULT_STATE_CAP;

fn to_syms(bytes: &[u8]) -> Vec<Symbol> {
    bytes.iter().map(|&b| Symbol::from(b)).collect()
}

#[test]
fn product_construction_soundness_on_random_automata() {
    let mut rng = StdRng::seed_from_u64(7);
    let alphabet = b"abc";
    for round in 0..30 {
        let left_set = random_string_set(&mut rng, alphabet, 8, 5);
        let right_set = random_string_set(&mut rng, alphabet, 8, 5);
        let left = Automaton::from_strings(AlphabetTag::Byte, left_set.iter().map(|s| to_syms(s)));
        let right =
            Automaton::from_strings(AlphabetTag::Byte, right_set.iter().map(|s| to_syms(s)));
        let product = left.intersect(&right, DEFAULT_STATE_CAP).unwrap();
        for s in all_strings(alphabet, 6) {
            let syms = to_syms(&s);
            let expected = left.accepts(&syms) && right.accepts(&syms);
            assert_eq!(product.accepts(&syms), expected, "round {round}, {s:?}");
        }
    }
}

#[test]
fn walk_count_total_matches_enumeration_on_random_languages() {
    let mut rng = StdRng::seed_from_u64(99);
    for _ in 0..25 {
        let set = random_string_set(&mut rng, b"abc", 12, 6);
        let a = Automaton::from_strings(AlphabetTag::Byte, set.iter().map(|s| to_syms(s)));
        let wc = a.count_walks(16);
        let e = a.enumerate(10_000);
        assert!(e.exhausted);
        assert_eq!(
            wc.total(a.initial()),
            &num_bigint::BigUint::from(e.strings.len())
        );
    }
}

proptest! {
    #[test]
    fn dump_round_trip_preserves_language(strings in proptest::collection::vec(
        proptest::collection::vec(97u8..100, 0..6), 1..8)) {
        let a = Automaton::from_strings(
            AlphabetTag::Byte,
            strings.iter().map(|s| to_syms(s)),
        );
        let back = Automaton::parse_dump(&a.dump()).unwrap();
        prop_assert_eq!(&a, &back);
    }

    #[test]
    fn tokenizer_round_trip_random_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let vocab = Vocabulary::byte_level();
        prop_assert_eq!(vocab.decode(&vocab.encode(&bytes)).unwrap(), bytes);
    }

    #[test]
    fn trained_tokenizer_round_trip_and_stability(seed in 0u64..50) {
        let corpus = "the quick brown fox jumps over the lazy dog\n\
                      pack my box with five dozen liquor jugs\n\
                      how vexingly quick daft zebras jump";
        let vocab = train_bpe(corpus, 280 + (seed as usize % 30)).unwrap();
        let mut rng = StdRng::seed_from_u64(seed);
        let samples = random_string_set(&mut rng, b"abcdefghijklm nopqrstuvwxyz", 10, 48);
        for s in samples {
            let encoded = vocab.encode(&s);
            prop_assert_eq!(&vocab.decode(&encoded).unwrap(), &s);
            // Stable under repeated encode/decode.
            let again = vocab.encode(&vocab.decode(&encoded).unwrap());
            prop_assert_eq!(&again, &encoded);
            // Canonical encoding is one of the exhaustive segmentations.
            if s.len() <= 12 {
                let all = vocab.all_tokenizations(&s, 16).unwrap();
                prop_assert!(all.contains(&encoded));
            }
        }
    }
}
