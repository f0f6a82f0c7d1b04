//! Randomized-traversal statistics: walk-count-normalized prefix sampling
//! is uniform over prefix strings, naive edge weighting shows the known
//! first-branch bias, and sampled estimates converge to exact conditionals.

use std::collections::HashMap;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::SeedableRng;

use lmre::automaton::{AlphabetTag, Automaton, Symbol};
use lmre::compiler::compile_full;
use lmre::executor::{random_sample, CompletionFilters, ExecOptions, SampleWeighting};
use lmre::harness::stats::goodness_of_fit_uniform;
use lmre::lm::{HashLm, NGramLm};
use lmre::testkit::random_string_set;
use lmre::tokenizer::Vocabulary;
use lmre::DEFAULT_STATE_CAP;

fn to_syms(bytes: &[u8]) -> Vec<Symbol> {
    bytes.iter().map(|&b| Symbol::from(b)).collect()
}

/// Samples `n` prefix strings through the executor with a trivial suffix.
fn sample_prefix_language(
    strings: &[Vec<u8>],
    n: usize,
    seed: u64,
    weighting: SampleWeighting,
) -> HashMap<Vec<u8>, u64> {
    let vocab = Vocabulary::byte_level();
    let lm = HashLm::new(vocab.clone(), 1234, 64);
    let byte_auto = Automaton::from_strings(AlphabetTag::Byte, strings.iter().map(|s| to_syms(s)));
    let prefix = Arc::new(compile_full(&byte_auto, &vocab, DEFAULT_STATE_CAP).unwrap());
    let wc = Arc::new(prefix.automaton.count_walks(64));
    let suffix = Arc::new(
        compile_full(
            &Automaton::epsilon(AlphabetTag::Byte),
            &vocab,
            DEFAULT_STATE_CAP,
        )
        .unwrap(),
    );
    let opts = ExecOptions {
        limit: n,
        weighting,
        retry_budget: 64,
        ..ExecOptions::default()
    };
    let mut counts: HashMap<Vec<u8>, u64> = HashMap::new();
    for r in random_sample(
        Some(prefix),
        Some(wc),
        suffix,
        &lm,
        opts,
        CompletionFilters::default(),
        seed,
    ) {
        let r = r.unwrap();
        *counts.entry(r.text).or_insert(0) += 1;
    }
    counts
}

#[test]
fn paper_language_normalized_vs_naive_first_edge() {
    let strings: Vec<Vec<u8>> = vec![b"a".to_vec(), b"b".to_vec(), b"bb".to_vec(), b"bbb".to_vec()];
    let n = 10_000;

    let naive = sample_prefix_language(&strings, n, 7, SampleWeighting::UniformEdges);
    let a_rate = *naive.get(b"a".as_slice()).unwrap_or(&0) as f64 / n as f64;
    assert!((a_rate - 0.5).abs() < 0.02, "naive a-rate {a_rate}");

    let normalized = sample_prefix_language(&strings, n, 7, SampleWeighting::WalkNormalized);
    let observed: Vec<u64> = strings
        .iter()
        .map(|s| *normalized.get(s).unwrap_or(&0))
        .collect();
    let report = goodness_of_fit_uniform(&observed).unwrap();
    assert!(
        report.p_value > 0.01,
        "normalized sampling should look uniform, p = {}",
        report.p_value
    );
}

#[test]
fn random_prefix_languages_sample_uniformly() {
    let mut rng = StdRng::seed_from_u64(0xfeed);
    for round in 0..6 {
        let strings = random_string_set(&mut rng, b"abc", 4 + round * 3, 6);
        let n = 6000;
        let counts = sample_prefix_language(&strings, n, round as u64, SampleWeighting::WalkNormalized);
        let observed: Vec<u64> = strings.iter().map(|s| *counts.get(s).unwrap_or(&0)).collect();
        let total: u64 = observed.iter().sum();
        assert_eq!(total, n as u64, "every sample lands in the language");
        let report = goodness_of_fit_uniform(&observed).unwrap();
        assert!(
            report.p_value > 0.01,
            "round {round}: p = {} counts {observed:?}",
            report.p_value
        );
    }
}

#[test]
fn sampled_conditionals_match_exact_scores() {
    // Three-outcome conditional; compare sampled frequencies against the
    // exact renormalized sequence probabilities.
    let vocab = Vocabulary::byte_level();
    let lm = NGramLm::train(
        vocab.clone(),
        "go north\ngo north\ngo north\ngo south\ngo south\ngo east",
        3,
        0.002,
    );
    let query = lmre::Query::builder("( north)|( south)|( east)")
        .prefix("go")
        .traversal(lmre::query::Traversal::Random { seed: 21 })
        .max_results(4000)
        .retry_budget(2000)
        .build()
        .unwrap();
    let mut counts: HashMap<String, u64> = HashMap::new();
    for item in query.execute(&lm).unwrap() {
        let r = item.unwrap();
        *counts.entry(r.text_string()).or_insert(0) += 1;
    }
    let prefix_tokens = vocab.encode(b"go");
    let candidates: Vec<Vec<u32>> = [" north", " south", " east"]
        .iter()
        .map(|s| vocab.encode(s.as_bytes()))
        .collect();
    let exact = lmre::executor::conditional_probability(
        &lm,
        &prefix_tokens,
        &candidates,
        lmre::DecisionRule::None,
    )
    .unwrap();
    let n: u64 = counts.values().sum();
    let estimated: Vec<f64> = ["go north", "go south", "go east"]
        .iter()
        .map(|s| *counts.get(*s).unwrap_or(&0) as f64 / n as f64)
        .collect();
    let tv: f64 = estimated
        .iter()
        .zip(&exact)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / 2.0;
    assert!(tv < 0.05, "total variation {tv}: est {estimated:?} vs {exact:?}");
}
