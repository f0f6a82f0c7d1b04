//! Bias harness: estimates the conditional distribution of an outcome slot
//! given a protected-attribute slot in a template, by random sampling under
//! the chosen encoding, and tests group independence with chi-square. In
//! canonical mode the sampled estimate can be cross-checked against the
//! exact conditional probabilities.

use serde::Serialize;

use crate::error::EngineError;
use crate::executor::conditional_probability;
use crate::lm::{CountingLm, DecisionRule, LanguageModel};
use crate::preprocess::{divergence_position, Preprocessor};
use crate::query::{Query, QueryEncoding, Traversal};
use crate::reference::edit_distance;
use crate::regex::escape_literal;

#[derive(Debug, Clone)]
pub struct BiasConfig {
    /// Template with a `{}` slot for the group, e.g.
    /// `The {} was trained in`.
    pub template: String,
    pub groups: Vec<String>,
    pub outcomes: Vec<String>,
    pub samples_per_group: usize,
    pub encoding: QueryEncoding,
    /// Expand the query by one edit before sampling.
    pub edits: bool,
    pub rule: DecisionRule,
    pub seed: u64,
    pub max_tokens: usize,
    /// Rejection-sampling retries allowed per emitted sample.
    pub retry_budget: usize,
    /// Condition on the filled template as a prefix (the usual setting).
    /// When false the whole template language is sampled unconditionally in
    /// one query and samples are attributed to groups afterwards, the
    /// "no prefix" treatment.
    pub use_prefix: bool,
}

impl BiasConfig {
    pub fn new(template: impl Into<String>, groups: Vec<String>, outcomes: Vec<String>) -> Self {
        BiasConfig {
            template: template.into(),
            groups,
            outcomes,
            samples_per_group: 1000,
            encoding: QueryEncoding::Canonical,
            edits: false,
            rule: DecisionRule::None,
            seed: 0,
            max_tokens: crate::DEFAULT_MAX_TOKENS,
            retry_budget: 2000,
            use_prefix: true,
        }
    }

    fn prefix_for(&self, group: &str) -> String {
        self.template.replacen("{}", group, 1)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BiasReport {
    pub groups: Vec<String>,
    pub outcomes: Vec<String>,
    /// groups x outcomes sample counts.
    pub counts: Vec<Vec<u64>>,
    /// Sampled estimate of P(outcome | group).
    pub estimated: Vec<Vec<f64>>,
    /// Exact conditional probabilities (canonical encodings only).
    pub exact: Option<Vec<Vec<f64>>>,
    pub chi_square: super::stats::ChiSquareReport,
    /// Positions where edited samples diverge from their nearest template
    /// string, when edits are enabled.
    pub edit_positions: Option<Vec<u64>>,
    /// Fraction of emitted samples that were not canonical.
    pub non_canonical_rate: f64,
    pub discarded_samples: u64,
    pub model_calls: u64,
}

pub fn harness_bias(
    config: &BiasConfig,
    model: &dyn LanguageModel,
) -> Result<BiasReport, EngineError> {
    if config.samples_per_group == 0 {
        return Err(EngineError::InvalidQuery("samples_per_group is zero".into()));
    }
    let model = CountingLm::new(model);
    let pattern = config
        .outcomes
        .iter()
        .map(|o| format!("( {})", escape_literal(o)))
        .collect::<Vec<_>>()
        .join("|");

    let mut counts = vec![vec![0u64; config.outcomes.len()]; config.groups.len()];
    let mut edit_positions: Vec<u64> = Vec::new();
    let mut non_canonical = 0u64;
    let mut total_samples = 0u64;
    let mut discarded = 0u64;

    if config.use_prefix {
        for (gi, group) in config.groups.iter().enumerate() {
            let prefix_text = config.prefix_for(group);
            let mut builder = Query::builder(pattern.clone())
                .prefix(escape_literal(&prefix_text))
                .encoding(config.encoding)
                .rule(config.rule)
                .traversal(Traversal::Random {
                    seed: config.seed.wrapping_add(gi as u64),
                })
                .max_results(config.samples_per_group)
                .max_tokens(config.max_tokens)
                .retry_budget(config.retry_budget);
            if config.edits {
                builder = builder.preprocessor(Preprocessor::Levenshtein { distance: 1 });
            }
            let query = builder.build()?;
            let execution = query.execute(&model)?;
            let stats = execution.stats();
            for item in execution {
                let result = item?;
                total_samples += 1;
                if !result.canonical {
                    non_canonical += 1;
                }
                let text = result.text_string();
                let suffix = &text[result.prefix_byte_len.min(text.len())..];
                let oi = nearest_outcome(&config.outcomes, suffix);
                counts[gi][oi] += 1;
                if config.edits && result.n_edits > 0 {
                    let source = format!("{} {}", prefix_text, config.outcomes[oi]);
                    edit_positions
                        .push(divergence_position(source.as_bytes(), text.as_bytes()) as u64);
                }
            }
            discarded += stats.discarded();
        }
    } else {
        // Unconditional generation over the whole template language: one
        // query, all regions model-driven, samples attributed afterwards.
        let group_branches = config
            .groups
            .iter()
            .map(|g| format!("({})", escape_literal(&config.prefix_for(g))))
            .collect::<Vec<_>>()
            .join("|");
        let full_pattern = format!("({group_branches})({pattern})");
        let mut builder = Query::builder(full_pattern)
            .encoding(config.encoding)
            .rule(config.rule)
            .traversal(Traversal::Random { seed: config.seed })
            .max_results(config.samples_per_group * config.groups.len())
            .max_tokens(config.max_tokens)
            .retry_budget(config.retry_budget);
        if config.edits {
            builder = builder.preprocessor(Preprocessor::Levenshtein { distance: 1 });
        }
        let query = builder.build()?;
        let execution = query.execute(&model)?;
        let stats = execution.stats();
        for item in execution {
            let result = item?;
            total_samples += 1;
            if !result.canonical {
                non_canonical += 1;
            }
            let text = result.text_string();
            let (gi, oi) = attribute(config, &text);
            counts[gi][oi] += 1;
            if config.edits && result.n_edits > 0 {
                let source = format!("{} {}", config.prefix_for(&config.groups[gi]), config.outcomes[oi]);
                edit_positions.push(divergence_position(source.as_bytes(), text.as_bytes()) as u64);
            }
        }
        discarded += stats.discarded();
    }

    let estimated: Vec<Vec<f64>> = counts
        .iter()
        .map(|row| {
            let n: u64 = row.iter().sum();
            row.iter()
                .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
                .collect()
        })
        .collect();

    let exact = if config.use_prefix && config.encoding == QueryEncoding::Canonical && !config.edits
    {
        Some(exact_conditionals(config, &model)?)
    } else {
        None
    };

    let table = super::stats::ContingencyTable::new(counts.clone())
        .map_err(|e| EngineError::InvalidQuery(e.to_string()))?;
    let chi_square =
        super::stats::chi_square_test(&table).map_err(|e| EngineError::InvalidQuery(e.to_string()))?;

    Ok(BiasReport {
        groups: config.groups.clone(),
        outcomes: config.outcomes.clone(),
        counts,
        estimated,
        exact,
        chi_square,
        edit_positions: if config.edits {
            Some(edit_positions)
        } else {
            None
        },
        non_canonical_rate: if total_samples == 0 {
            0.0
        } else {
            non_canonical as f64 / total_samples as f64
        },
        discarded_samples: discarded,
        model_calls: model.calls(),
    })
}

/// Exact renormalized conditional probabilities of each outcome per group.
pub fn exact_conditionals(
    config: &BiasConfig,
    model: &dyn LanguageModel,
) -> Result<Vec<Vec<f64>>, EngineError> {
    let vocab = model.vocab();
    let mut out = Vec::with_capacity(config.groups.len());
    for group in &config.groups {
        let prefix_tokens = vocab.encode(config.prefix_for(group).as_bytes());
        let candidates: Vec<Vec<u32>> = config
            .outcomes
            .iter()
            .map(|o| vocab.encode(format!(" {o}").as_bytes()))
            .collect();
        let probs = conditional_probability(model, &prefix_tokens, &candidates, config.rule)?;
        out.push(probs);
    }
    Ok(out)
}

/// Attributes an emitted suffix (possibly edited) to its nearest outcome by
/// edit distance, ties to the earlier outcome.
fn nearest_outcome(outcomes: &[String], suffix: &str) -> usize {
    let mut best = 0;
    let mut best_d = usize::MAX;
    for (i, o) in outcomes.iter().enumerate() {
        let target = format!(" {o}");
        let d = edit_distance(target.as_bytes(), suffix.as_bytes());
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Attributes an unconditional sample to the nearest (group, outcome) pair.
fn attribute(config: &BiasConfig, text: &str) -> (usize, usize) {
    let mut best = (0, 0);
    let mut best_d = usize::MAX;
    for (gi, group) in config.groups.iter().enumerate() {
        for (oi, outcome) in config.outcomes.iter().enumerate() {
            let full = format!("{} {}", config.prefix_for(group), outcome);
            let d = edit_distance(full.as_bytes(), text.as_bytes());
            if d < best_d {
                best_d = d;
                best = (gi, oi);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::NGramLm;
    use crate::tokenizer::Vocabulary;

    fn toy_model() -> NGramLm {
        let vocab = Vocabulary::byte_level();
        let corpus = "the cat likes fish\nthe cat likes milk\nthe dog likes fish\n\
                      the dog likes bones\nthe dog likes bones";
        NGramLm::train(vocab, corpus, 3, 0.002)
    }

    #[test]
    fn counts_sum_to_samples_and_chi_square_reports() {
        let config = BiasConfig {
            samples_per_group: 80,
            rule: DecisionRule::None,
            ..BiasConfig::new(
                "the {} likes".to_string(),
                vec!["cat".into(), "dog".into()],
                vec!["fish".into(), "milk".into(), "bones".into()],
            )
        };
        let model = toy_model();
        let report = harness_bias(&config, &model).unwrap();
        for row in &report.counts {
            assert_eq!(row.iter().sum::<u64>(), 80);
        }
        assert!(report.chi_square.p_value >= 0.0 && report.chi_square.p_value <= 1.0);
        assert!(report.exact.is_some());
    }

    #[test]
    fn sampled_estimates_track_exact_probabilities() {
        let config = BiasConfig {
            samples_per_group: 600,
            rule: DecisionRule::None,
            seed: 11,
            ..BiasConfig::new(
                "the {} likes".to_string(),
                vec!["cat".into(), "dog".into()],
                vec!["fish".into(), "milk".into(), "bones".into()],
            )
        };
        let model = toy_model();
        let report = harness_bias(&config, &model).unwrap();
        let exact = report.exact.as_ref().unwrap();
        for (est_row, exact_row) in report.estimated.iter().zip(exact) {
            let tv: f64 = est_row
                .iter()
                .zip(exact_row)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / 2.0;
            assert!(tv < 0.08, "total variation {tv}");
        }
    }

    /// Model that hashes the two group names identically, so both groups
    /// see the exact same conditional distribution.
    struct GroupBlindLm {
        inner: crate::lm::HashLm,
    }

    impl crate::lm::LanguageModel for GroupBlindLm {
        fn vocab(&self) -> &Vocabulary {
            self.inner.vocab()
        }
        fn max_len(&self) -> usize {
            self.inner.max_len()
        }
        fn next_distribution(
            &self,
            prefix: &[u32],
        ) -> Result<Vec<f64>, crate::lm::LmError> {
            // Collapse the group bytes: 'y' acts as 'x', so prefixes
            // "..x.." and "..y.." share a context hash.
            let normalized: Vec<u32> = prefix
                .iter()
                .map(|&t| if t == u32::from(b'y') { u32::from(b'x') } else { t })
                .collect();
            self.inner.next_distribution(&normalized)
        }
    }

    #[test]
    fn symmetric_model_shows_no_bias() {
        let vocab = Vocabulary::byte_level();
        let model = GroupBlindLm {
            inner: crate::lm::HashLm::new(vocab, 99, 32),
        };
        let config = BiasConfig::new(
            "{} went to".to_string(),
            vec!["x".into(), "y".into()],
            vec!["a".into(), "b".into()],
        );
        let exact = exact_conditionals(&config, &model).unwrap();
        assert_eq!(exact[0], exact[1], "groups share every conditional");
        // Proportional counts give p exactly 1.
        let counts: Vec<Vec<u64>> = exact
            .iter()
            .map(|row| row.iter().map(|p| (p * 1e6).round() as u64).collect())
            .collect();
        let table = super::super::stats::ContingencyTable::new(counts).unwrap();
        let report = super::super::stats::chi_square_test(&table).unwrap();
        assert!(report.p_value > 0.999, "p = {}", report.p_value);
    }

    #[test]
    fn sampled_estimates_converge_with_more_samples() {
        let model = toy_model();
        let run = |n: usize| -> f64 {
            let config = BiasConfig {
                samples_per_group: n,
                seed: 5,
                ..BiasConfig::new(
                    "the {} likes".to_string(),
                    vec!["cat".into(), "dog".into()],
                    vec!["fish".into(), "milk".into(), "bones".into()],
                )
            };
            let report = harness_bias(&config, &model).unwrap();
            let exact = report.exact.as_ref().unwrap();
            report
                .estimated
                .iter()
                .zip(exact)
                .map(|(est, ex)| {
                    est.iter().zip(ex).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0
                })
                .fold(0.0f64, f64::max)
        };
        let coarse = run(500);
        let fine = run(5000);
        assert!(
            fine < coarse.max(0.02),
            "estimates should tighten: tv500 = {coarse}, tv5000 = {fine}"
        );
        assert!(fine < 0.05, "tv at 5000 samples = {fine}");
    }

    #[test]
    fn unconditional_sampling_attributes_groups() {
        let config = BiasConfig {
            samples_per_group: 60,
            encoding: QueryEncoding::Full,
            use_prefix: false,
            seed: 3,
            ..BiasConfig::new(
                "the {} likes".to_string(),
                vec!["cat".into(), "dog".into()],
                vec!["fish".into(), "milk".into(), "bones".into()],
            )
        };
        let model = toy_model();
        let report = harness_bias(&config, &model).unwrap();
        let total: u64 = report.counts.iter().flatten().sum();
        assert_eq!(total, 120, "all samples attributed");
        assert!(report.exact.is_none());
        // Both groups appear: the model was trained on both.
        assert!(report.counts[0].iter().sum::<u64>() > 0);
        assert!(report.counts[1].iter().sum::<u64>() > 0);
    }

    #[test]
    fn edits_produce_position_reports() {
        let mut config = BiasConfig::new(
            "the {} likes".to_string(),
            vec!["cat".into(), "dog".into()],
            vec!["fish".into(), "milk".into()],
        );
        config.samples_per_group = 40;
        config.edits = true;
        config.encoding = QueryEncoding::Canonical;
        let model = toy_model();
        let report = harness_bias(&config, &model).unwrap();
        assert!(report.edit_positions.is_some());
    }
}
