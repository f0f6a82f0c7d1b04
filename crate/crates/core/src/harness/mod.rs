//! Validation-task harnesses reproducing four experiment shapes at desk
//! scale: extraction throughput (memorization), bias estimation with
//! chi-square testing, prompted/unprompted extraction counting, and cloze
//! accuracy with pattern variants. Reports carry model-call counts so
//! efficiency comparisons stay hardware-independent.

pub mod bias;
pub mod cloze;
pub mod extract;
pub mod stats;
pub mod toxicity;

pub use bias::{harness_bias, BiasConfig, BiasReport};
pub use cloze::{harness_cloze, ClozeConfig, ClozeReport, ClozeVariant};
pub use extract::{harness_extract, ExtractConfig, ExtractReport};
pub use stats::{chi_square_test, goodness_of_fit, ChiSquareReport, ContingencyTable, StatsError};
pub use toxicity::{harness_toxicity, ToxicityConfig, ToxicityReport};

/// The bundled English stop-word list (one word per line).
pub const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords.txt");
