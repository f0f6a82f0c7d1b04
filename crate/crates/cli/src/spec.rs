//! Query spec files: flat `key = value` lines with `#` comments. Values may
//! be wrapped in double quotes to preserve leading or trailing spaces.
//! Repeated `preprocessor` keys form the ordered preprocessor list. Unknown
//! keys are rejected. All paths resolve relative to the spec file.
//!
//! ```text
//! pattern = The ((cat)|(dog))
//! prefix = "The "
//! encoding = canonical
//! canonical_strategy = enumerate
//! top_k = 40
//! traversal = shortest
//! seed = 0
//! max_results = 10
//! max_tokens = 64
//! preprocessor = levenshtein 1
//! preprocessor = filter stopwords.txt deferred
//! vocab = vocab_dir
//! model = model.txt
//! ```

use std::path::{Path, PathBuf};

use lmre::compiler::CanonicalStrategy;
use lmre::preprocess::{FilterMode, Preprocessor};
use lmre::query::{Query, QueryEncoding, Traversal};
use lmre::regex::{compile_to_automaton, parse as parse_pattern, CompileOptions};
use lmre::DecisionRule;

#[derive(Debug)]
pub struct SpecError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for SpecError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "spec line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for SpecError {}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, SpecError> {
    Err(SpecError {
        line,
        message: message.into(),
    })
}

#[derive(Debug, Clone)]
pub enum PreprocessorSpec {
    Levenshtein(u32),
    Filter { path: PathBuf, mode: FilterMode },
}

/// Parsed spec file contents, paths already resolved.
#[derive(Debug, Clone)]
pub struct QuerySpec {
    pub pattern: String,
    pub prefix: String,
    pub encoding: QueryEncoding,
    pub canonical_strategy: CanonicalStrategy,
    pub top_k: Option<usize>,
    pub traversal: Traversal,
    pub max_results: Option<usize>,
    pub max_tokens: Option<usize>,
    pub preprocessors: Vec<PreprocessorSpec>,
    pub vocab: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

impl QuerySpec {
    pub fn parse(text: &str, base_dir: &Path) -> Result<QuerySpec, SpecError> {
        let mut pattern = None;
        let mut prefix = String::new();
        let mut encoding = QueryEncoding::Canonical;
        let mut canonical_strategy = CanonicalStrategy::Enumerate;
        let mut top_k = None;
        let mut traversal_kind = "shortest".to_string();
        let mut seed = 0u64;
        let mut max_results = None;
        let mut max_tokens = None;
        let mut preprocessors = Vec::new();
        let mut vocab = None;
        let mut model = None;

        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return err(lineno, "expected key = value");
            };
            let key = key.trim();
            let value = unquote(value.trim());
            match key {
                "pattern" => pattern = Some(value),
                "prefix" => prefix = value,
                "encoding" => {
                    encoding = match value.as_str() {
                        "full" => QueryEncoding::Full,
                        "canonical" => QueryEncoding::Canonical,
                        other => return err(lineno, format!("unknown encoding {other:?}")),
                    }
                }
                "canonical_strategy" => {
                    canonical_strategy = match value.as_str() {
                        "enumerate" => CanonicalStrategy::Enumerate,
                        "runtime_filter" => CanonicalStrategy::RuntimeFilter,
                        other => {
                            return err(lineno, format!("unknown canonical_strategy {other:?}"))
                        }
                    }
                }
                "top_k" => {
                    let k: usize = value
                        .parse()
                        .map_err(|_| SpecError {
                            line: lineno,
                            message: "top_k must be a positive integer".into(),
                        })?;
                    if k == 0 {
                        return err(lineno, "top_k must be positive");
                    }
                    top_k = Some(k);
                }
                "traversal" => {
                    if value != "shortest" && value != "random" {
                        return err(lineno, format!("unknown traversal {value:?}"));
                    }
                    traversal_kind = value;
                }
                "seed" => {
                    seed = value.parse().map_err(|_| SpecError {
                        line: lineno,
                        message: "seed must be an integer".into(),
                    })?;
                }
                "max_results" => {
                    max_results = Some(value.parse().map_err(|_| SpecError {
                        line: lineno,
                        message: "max_results must be an integer".into(),
                    })?);
                }
                "max_tokens" => {
                    max_tokens = Some(value.parse().map_err(|_| SpecError {
                        line: lineno,
                        message: "max_tokens must be an integer".into(),
                    })?);
                }
                "preprocessor" => {
                    preprocessors.push(parse_preprocessor(&value, base_dir, lineno)?);
                }
                "vocab" => vocab = Some(base_dir.join(value)),
                "model" => model = Some(base_dir.join(value)),
                other => return err(lineno, format!("unknown key {other:?}")),
            }
        }
        let Some(pattern) = pattern else {
            return err(0, "missing required key: pattern");
        };
        let traversal = if traversal_kind == "random" {
            Traversal::Random { seed }
        } else {
            Traversal::Shortest
        };
        Ok(QuerySpec {
            pattern,
            prefix,
            encoding,
            canonical_strategy,
            top_k,
            traversal,
            max_results,
            max_tokens,
            preprocessors,
            vocab,
            model,
        })
    }

    pub fn load(path: &Path) -> Result<QuerySpec, Box<dyn std::error::Error>> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(QuerySpec::parse(&text, base)?)
    }

    /// Builds the engine query, loading filter files.
    pub fn to_query(&self) -> Result<Query, Box<dyn std::error::Error>> {
        let mut builder = Query::builder(self.pattern.clone())
            .prefix(self.prefix.clone())
            .encoding(self.encoding)
            .canonical_strategy(self.canonical_strategy)
            .traversal(self.traversal);
        if let Some(k) = self.top_k {
            builder = builder.rule(DecisionRule::TopK(k));
        }
        if let Some(n) = self.max_results {
            builder = builder.max_results(n);
        }
        if let Some(n) = self.max_tokens {
            builder = builder.max_tokens(n);
        }
        for pp in &self.preprocessors {
            builder = builder.preprocessor(match pp {
                PreprocessorSpec::Levenshtein(d) => Preprocessor::Levenshtein { distance: *d },
                PreprocessorSpec::Filter { path, mode } => {
                    let words = std::fs::read_to_string(path)?;
                    let body = words
                        .lines()
                        .filter(|l| !l.is_empty())
                        .map(|w| format!("({})", lmre::regex::escape_literal(w)))
                        .collect::<Vec<_>>()
                        .join("|");
                    let deny = if body.is_empty() {
                        // Empty word list: deny nothing.
                        lmre::Automaton::empty(lmre::automaton::AlphabetTag::Byte)
                    } else {
                        let ast = parse_pattern(&body)?;
                        compile_to_automaton(&ast, &CompileOptions::default())?
                    };
                    Preprocessor::Filter { deny, mode: *mode }
                }
            });
        }
        Ok(builder.build()?)
    }
}

fn parse_preprocessor(
    value: &str,
    base_dir: &Path,
    lineno: usize,
) -> Result<PreprocessorSpec, SpecError> {
    let mut parts = value.split_whitespace();
    match parts.next() {
        Some("levenshtein") => {
            let d: u32 = parts
                .next()
                .and_then(|d| d.parse().ok())
                .filter(|&d| d >= 1)
                .ok_or(SpecError {
                    line: lineno,
                    message: "usage: preprocessor = levenshtein <distance>=1..".into(),
                })?;
            Ok(PreprocessorSpec::Levenshtein(d))
        }
        Some("filter") => {
            let path = parts.next().ok_or(SpecError {
                line: lineno,
                message: "usage: preprocessor = filter <path> [eager|deferred]".into(),
            })?;
            let mode = match parts.next() {
                None | Some("deferred") => FilterMode::Deferred,
                Some("eager") => FilterMode::Eager,
                Some(other) => {
                    return err(lineno, format!("unknown filter mode {other:?}"));
                }
            };
            Ok(PreprocessorSpec::Filter {
                path: base_dir.join(path),
                mode,
            })
        }
        _ => err(lineno, "preprocessor must be 'levenshtein <d>' or 'filter <path> [mode]'"),
    }
}

fn unquote(value: &str) -> String {
    if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
        value[1..value.len() - 1].to_string()
    } else {
        value.to_string()
    }
}
