//! Command-line front end: run queries from spec files, train models and
//! vocabularies, dump automata, and run the validation harnesses.
//!
//! Exit codes: 0 success, 2 parse, 3 compile, 4 model, 5 execution, 6 io.

mod spec;

use std::io::Write as _;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};

use lmre::error::{EngineError, Stage};
use lmre::harness::{
    self, BiasConfig, ClozeConfig, ClozeVariant, ExtractConfig, ToxicityConfig,
};
use lmre::lm::{CountingLm, DecisionRule, LanguageModel, NGramLm};
use lmre::query::QueryEncoding;
use lmre::tokenizer::{train_bpe, Vocabulary};

use spec::QuerySpec;

const EXIT_PARSE: i32 = 2;
const EXIT_COMPILE: i32 = 3;
const EXIT_MODEL: i32 = 4;
const EXIT_EXEC: i32 = 5;
const EXIT_IO: i32 = 6;

#[derive(Parser)]
#[command(name = "lmre", version, about = "Regex queries over language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a query spec and stream JSONL results.
    Run(RunArgs),
    /// Compile a query spec and dump its byte and token automata as DOT.
    Compile(CompileArgs),
    /// Train a BPE vocabulary and an n-gram model from a text corpus.
    TrainLm(TrainArgs),
    /// Validation-task harnesses.
    #[command(subcommand)]
    Harness(HarnessCommand),
}

#[derive(Args)]
struct RunArgs {
    /// Query spec file.
    spec: PathBuf,
    /// JSONL output path (stdout when omitted).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Stop after this much wall-clock time.
    #[arg(long)]
    limit_seconds: Option<f64>,
    /// Let EOS bypass the decision rule at sampling stop decisions.
    #[arg(long)]
    exempt_eos: bool,
    /// Cost prefix steps at zero (comparison mode).
    #[arg(long)]
    prefix_zero_cost: bool,
}

#[derive(Args)]
struct CompileArgs {
    /// Query spec file.
    spec: PathBuf,
    /// Output path prefix; writes <prefix>.bytes.dot and <prefix>.tokens.dot.
    #[arg(long)]
    dot: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus, UTF-8 text, one document per line.
    corpus: PathBuf,
    /// N-gram order.
    #[arg(long, default_value_t = 3)]
    order: usize,
    /// Vocabulary size (byte and merge tokens; EOS is added on top).
    #[arg(long, default_value_t = 256)]
    vocab_size: usize,
    /// Add-alpha smoothing constant.
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Output directory for tokens.txt, merges.txt, and model.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum HarnessCommand {
    /// Extraction throughput against fixed-length sampling baselines.
    Extract(ExtractArgs),
    /// Conditional-distribution bias estimation with a chi-square test.
    Bias(BiasArgs),
    /// Prompted/unprompted targeted extraction counting.
    Toxicity(ToxicityArgs),
    /// Cloze accuracy with pattern variants.
    Cloze(ClozeArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Vocabulary directory (tokens.txt + merges.txt).
    #[arg(long)]
    vocab: PathBuf,
    /// N-gram model file.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Pattern to extract.
    #[arg(long)]
    pattern: String,
    /// Literal prefix text.
    #[arg(long, default_value = "")]
    prefix: String,
    #[arg(long)]
    top_k: Option<usize>,
    /// Engine emission budget.
    #[arg(long, default_value_t = 100)]
    budget: usize,
    /// Attempts per baseline stop length.
    #[arg(long, default_value_t = 200)]
    baseline_attempts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON report path (stdout when omitted).
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct BiasArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Template with one {} slot, e.g. "The {} was trained in".
    #[arg(long)]
    template: String,
    /// Comma-separated protected-attribute values.
    #[arg(long)]
    groups: String,
    /// Comma-separated outcome words.
    #[arg(long)]
    outcomes: String,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// full or canonical.
    #[arg(long, default_value = "canonical")]
    encoding: String,
    /// Expand the template by one edit.
    #[arg(long)]
    edits: bool,
    /// Sample the whole template unconditionally instead of conditioning
    /// on the filled template as a prefix.
    #[arg(long)]
    no_prefix: bool,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ToxicityArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Corpus to grep for target spans.
    #[arg(long)]
    corpus: PathBuf,
    /// Pattern matching the target spans.
    #[arg(long)]
    deny_pattern: String,
    /// Unprompted mode (default is prompted).
    #[arg(long)]
    unprompted: bool,
    #[arg(long)]
    edits: bool,
    /// full or canonical.
    #[arg(long, default_value = "canonical")]
    encoding: String,
    #[arg(long, default_value_t = 40)]
    top_k: usize,
    /// Extraction cap per input.
    #[arg(long, default_value_t = 1000)]
    per_input_cap: usize,
    #[arg(long)]
    max_inputs: Option<usize>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ClozeArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Dataset file: context<TAB>answer lines.
    #[arg(long)]
    dataset: PathBuf,
    /// baseline, words, terminated, or no_stop.
    #[arg(long, default_value = "baseline")]
    variant: String,
    #[arg(long)]
    top_k: Option<usize>,
    /// Items to evaluate from the head of the dataset.
    #[arg(long)]
    n_items: Option<usize>,
    /// Stop-word list file (bundled list when omitted).
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(args) => run(args),
        Command::Compile(args) => compile(args),
        Command::TrainLm(args) => train_lm(args),
        Command::Harness(args) => run_harness(args),
    };
    std::process::exit(match code {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    });
}

struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn io(e: impl std::fmt::Display) -> Self {
        CliError {
            code: EXIT_IO,
            message: e.to_string(),
        }
    }

    fn parse(e: impl std::fmt::Display) -> Self {
        CliError {
            code: EXIT_PARSE,
            message: e.to_string(),
        }
    }

    fn model(e: impl std::fmt::Display) -> Self {
        CliError {
            code: EXIT_MODEL,
            message: e.to_string(),
        }
    }
}

fn stage_code(stage: Stage) -> i32 {
    match stage {
        Stage::Parse => EXIT_PARSE,
        Stage::Compile | Stage::Preprocess | Stage::TokenCompile => EXIT_COMPILE,
        Stage::Model => EXIT_MODEL,
        Stage::Execute => EXIT_EXEC,
        Stage::Io => EXIT_IO,
    }
}

fn engine_error(e: EngineError) -> CliError {
    CliError {
        code: stage_code(e.stage()),
        message: format!("[{}] {}", e.stage(), e),
    }
}

fn boxed_error(e: Box<dyn std::error::Error>) -> CliError {
    match e.downcast::<EngineError>() {
        Ok(engine) => engine_error(*engine),
        Err(other) => match other.downcast::<spec::SpecError>() {
            Ok(spec) => CliError::parse(spec),
            Err(io) => CliError::io(io),
        },
    }
}

fn load_model(args: &ModelArgs) -> Result<NGramLm, CliError> {
    let vocab = Vocabulary::load(&args.vocab).map_err(CliError::model)?;
    NGramLm::load(&args.model, vocab).map_err(CliError::model)
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os("LMRE_CACHE_DIR").map(PathBuf::from)
}

fn warn_bare_dot(pattern: &str) {
    // An unescaped '.' in literal-looking patterns (URLs especially) is
    // usually intended as a dot.
    let ast = match lmre::regex::parse(pattern) {
        Ok(ast) => ast,
        Err(_) => return,
    };
    if ast.contains_any_byte_class() {
        eprintln!(
            "warning: pattern contains an unescaped '.', which matches any byte \
             except newline; write '\\.' for a literal dot"
        );
    }
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let spec = QuerySpec::load(&args.spec).map_err(boxed_error)?;
    warn_bare_dot(&spec.pattern);
    let model_path = spec.model.clone().ok_or_else(|| CliError::parse(
        "spec is missing the 'model' key required by run",
    ))?;
    let vocab_path = spec.vocab.clone().ok_or_else(|| CliError::parse(
        "spec is missing the 'vocab' key required by run",
    ))?;
    let vocab = Vocabulary::load(&vocab_path).map_err(CliError::model)?;
    let model = NGramLm::load(&model_path, vocab).map_err(CliError::model)?;
    let counting = CountingLm::new(model);

    let mut query = spec.to_query().map_err(boxed_error)?;
    query.exempt_eos = args.exempt_eos;
    query.prefix_zero_cost = args.prefix_zero_cost;
    query.limit_seconds = args.limit_seconds;

    let compiled = query
        .compile_cached(counting.vocab(), cache_dir().as_deref())
        .map_err(engine_error)?;
    let execution = query
        .execute_compiled(compiled, &counting)
        .map_err(engine_error)?;
    let stats = execution.stats();

    let mut sink: Box<dyn std::io::Write> = match &args.output {
        Some(path) => Box::new(std::fs::File::create(path).map_err(CliError::io)?),
        None => Box::new(std::io::stdout()),
    };
    let deadline = args
        .limit_seconds
        .map(|s| Instant::now() + Duration::from_secs_f64(s));
    let started = Instant::now();
    let mut results = 0u64;
    for item in execution {
        let result = item.map_err(engine_error)?;
        let line = serde_json::to_string(&result).map_err(CliError::io)?;
        writeln!(sink, "{line}").map_err(CliError::io)?;
        sink.flush().map_err(CliError::io)?;
        results += 1;
        if let Some(deadline) = deadline {
            if Instant::now() >= deadline {
                break;
            }
        }
    }
    eprintln!(
        "results={} elapsed={:.3}s model_calls={} discarded={}",
        results,
        started.elapsed().as_secs_f64(),
        counting.calls(),
        stats.discarded(),
    );
    Ok(())
}

fn compile(args: CompileArgs) -> Result<(), CliError> {
    let spec = QuerySpec::load(&args.spec).map_err(boxed_error)?;
    warn_bare_dot(&spec.pattern);
    let vocab = match &spec.vocab {
        Some(path) => Vocabulary::load(path).map_err(CliError::model)?,
        None => Vocabulary::byte_level(),
    };
    let query = spec.to_query().map_err(boxed_error)?;
    let compiled = query
        .compile_cached(&vocab, cache_dir().as_deref())
        .map_err(engine_error)?;

    // Byte automaton of the whole query: prefix . suffix as separate dumps
    // would lose the concatenation, so dump the suffix automaton alongside
    // the prefixed token automaton of each region.
    let bytes_path = args.dot.with_extension("bytes.dot");
    let tokens_path = args.dot.with_extension("tokens.dot");
    let mut bytes_dot = String::new();
    bytes_dot.push_str(&compiled.prefix_byte().to_dot());
    bytes_dot.push_str(&compiled.suffix_byte().to_dot());
    std::fs::write(&bytes_path, bytes_dot).map_err(CliError::io)?;
    let mut tokens_dot = String::new();
    if let Some(prefix_ta) = &compiled.prefix_ta {
        tokens_dot.push_str(&prefix_ta.to_dot(&vocab));
    }
    tokens_dot.push_str(&compiled.suffix_ta.to_dot(&vocab));
    std::fs::write(&tokens_path, tokens_dot).map_err(CliError::io)?;
    eprintln!(
        "wrote {} and {}",
        bytes_path.display(),
        tokens_path.display()
    );
    Ok(())
}

fn train_lm(args: TrainArgs) -> Result<(), CliError> {
    let corpus = std::fs::read_to_string(&args.corpus).map_err(CliError::io)?;
    let vocab = train_bpe(&corpus, args.vocab_size).map_err(CliError::model)?;
    let model = NGramLm::train(vocab.clone(), &corpus, args.order, args.alpha);
    std::fs::create_dir_all(&args.out).map_err(CliError::io)?;
    vocab.save(&args.out).map_err(CliError::model)?;
    model
        .save(&args.out.join("model.txt"))
        .map_err(CliError::model)?;
    eprintln!(
        "trained vocab of {} tokens and order-{} model into {}",
        vocab.len(),
        args.order,
        args.out.display()
    );
    Ok(())
}

fn parse_encoding(text: &str) -> Result<QueryEncoding, CliError> {
    match text {
        "full" => Ok(QueryEncoding::Full),
        "canonical" => Ok(QueryEncoding::Canonical),
        other => Err(CliError::parse(format!("unknown encoding {other:?}"))),
    }
}

fn rule_from(top_k: Option<usize>) -> DecisionRule {
    match top_k {
        Some(k) => DecisionRule::TopK(k),
        None => DecisionRule::None,
    }
}

fn write_report<T: serde::Serialize>(report: &T, path: Option<&PathBuf>) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(report).map_err(CliError::io)?;
    match path {
        Some(path) => std::fs::write(path, json).map_err(CliError::io)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn run_harness(command: HarnessCommand) -> Result<(), CliError> {
    match command {
        HarnessCommand::Extract(args) => {
            let model = load_model(&args.model)?;
            let mut config = ExtractConfig::new(args.pattern.clone(), args.prefix.clone());
            config.rule = rule_from(args.top_k);
            config.budget = args.budget;
            config.baseline_attempts = args.baseline_attempts;
            config.seed = args.seed;
            let report =
                harness::harness_extract(&config, &|_| true, &model).map_err(engine_error)?;
            eprintln!(
                "engine: {} unique ({} calls); best baseline: {}",
                report.engine.unique_valid,
                report.engine.model_calls,
                report
                    .best_baseline()
                    .map(|(n, r)| format!("n={} {} unique ({} calls)", n, r.unique_valid, r.model_calls))
                    .unwrap_or_else(|| "none valid".into()),
            );
            write_report(&report, args.json.as_ref())
        }
        HarnessCommand::Bias(args) => {
            let model = load_model(&args.model)?;
            let groups: Vec<String> = args.groups.split(',').map(str::to_string).collect();
            let outcomes: Vec<String> = args.outcomes.split(',').map(str::to_string).collect();
            let mut config = BiasConfig::new(args.template.clone(), groups, outcomes);
            config.samples_per_group = args.samples;
            config.encoding = parse_encoding(&args.encoding)?;
            config.edits = args.edits;
            config.use_prefix = !args.no_prefix;
            config.rule = rule_from(args.top_k);
            config.seed = args.seed;
            let report = harness::harness_bias(&config, &model).map_err(engine_error)?;
            eprintln!(
                "chi-square: statistic={:.4} dof={} p={:.6e}",
                report.chi_square.statistic, report.chi_square.dof, report.chi_square.p_value
            );
            write_report(&report, args.json.as_ref())
        }
        HarnessCommand::Toxicity(args) => {
            let model = load_model(&args.model)?;
            let corpus = std::fs::read_to_string(&args.corpus).map_err(CliError::io)?;
            let mut config = ToxicityConfig::new(args.deny_pattern.clone());
            config.prompted = !args.unprompted;
            config.edits = args.edits;
            config.encoding = parse_encoding(&args.encoding)?;
            config.rule = DecisionRule::TopK(args.top_k);
            config.per_input_cap = args.per_input_cap;
            if let Some(n) = args.max_inputs {
                config.max_inputs = n;
            }
            let report =
                harness::harness_toxicity(&config, &corpus, &model).map_err(engine_error)?;
            eprintln!(
                "{} / {} inputs extracted; {} total extractions",
                report.extracted_inputs, report.inputs, report.total_extractions
            );
            write_report(&report, args.json.as_ref())
        }
        HarnessCommand::Cloze(args) => {
            let model = load_model(&args.model)?;
            let dataset = std::fs::read_to_string(&args.dataset).map_err(CliError::io)?;
            let variant = match args.variant.as_str() {
                "baseline" => ClozeVariant::Baseline,
                "words" => ClozeVariant::Words,
                "terminated" => ClozeVariant::Terminated,
                "no_stop" => ClozeVariant::NoStop,
                other => return Err(CliError::parse(format!("unknown variant {other:?}"))),
            };
            let mut config = ClozeConfig::new(variant);
            config.rule = rule_from(args.top_k);
            if let Some(n) = args.n_items {
                config.n_items = n;
            }
            if let Some(path) = &args.stopwords {
                let text = std::fs::read_to_string(path).map_err(CliError::io)?;
                config.stopwords = text
                    .lines()
                    .filter(|l| !l.is_empty())
                    .map(str::to_string)
                    .collect();
            }
            let report = harness::harness_cloze(&dataset, &config, &model).map_err(engine_error)?;
            eprintln!(
                "accuracy: {:.1}% over {} items",
                report.accuracy * 100.0,
                report.items.len()
            );
            write_report(&report, args.json.as_ref())
        }
    }
}
