//! `earnn`: ingest, synthesize, train, evaluate, rank, visualize and
//! gradient-check answer-value models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use earnn::network::VariantConfig;

/// Exit status for a check that ran and failed.
const EXIT_VERIFY: u8 = 1;
/// Exit status for bad flags or arguments.
const EXIT_USAGE: u8 = 2;
/// Exit status for unreadable, unwritable or malformed files.
const EXIT_IO: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "earnn", version, about = "Answer-value models for community question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clean a JSONL corpus and print its statistics.
    Ingest(IngestArgs),
    /// Write a synthetic corpus with planted answer values.
    Synth(SynthArgs),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Evaluate a model on a corpus.
    Eval(EvalArgs),
    /// Rank the answers of one question.
    Rank(RankArgs),
    /// Render attention weights as a static HTML page.
    Visualize(VisualizeArgs),
    /// Compare analytic gradients with finite differences on a random instance.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Raw corpus (JSONL).
    #[arg(long)]
    input: PathBuf,
    /// Where to write the cleaned corpus.
    #[arg(long)]
    output: PathBuf,
    /// Keep questions with strictly more answers than this.
    #[arg(long, default_value_t = 10)]
    min_answers: usize,
    /// Keep questions whose best answer has strictly more upvotes than this.
    #[arg(long, default_value_t = 20)]
    min_top_upvotes: u64,
    /// Drop questions and answers with fewer words.
    #[arg(long, default_value_t = 10)]
    min_words: usize,
    /// Keep questions without topic phrases.
    #[arg(long)]
    allow_no_topics: bool,
    /// Collection time (epoch seconds) for the minimum-age rule.
    #[arg(long, requires = "min_age")]
    reference_time: Option<i64>,
    /// Drop records younger than this many seconds at the reference time.
    #[arg(long, requires = "reference_time")]
    min_age: Option<i64>,
    #[arg(long, default_value_t = earnn::corpus::DEFAULT_GOOD_THRESHOLD)]
    good_threshold: u64,
    /// Triples per question used for the statistics' sampled count.
    #[arg(long, default_value_t = 191)]
    sample_triples: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    output: PathBuf,
    /// JSON file with generator settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    questions: Option<usize>,
    #[arg(long)]
    answers_per_question: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    decay_horizon: Option<f64>,
    #[arg(long)]
    time_spread: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Selection,
    Ranking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
enum TripleArg {
    GoodVsBad,
    AllPairs,
    Sampled,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Where to write the model file.
    #[arg(long)]
    output: PathBuf,
    /// Per-epoch JSONL log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// JSON file with training settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<VariantConfig>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    decay_horizon: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Word vector and hidden size.
    #[arg(long)]
    dim: Option<usize>,
    /// Width of the matching layer (defaults to --dim).
    #[arg(long)]
    head_dim: Option<usize>,
    #[arg(long)]
    min_count: Option<usize>,
    /// Pretrained vectors (`word v1 .. vK` per line).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    freeze_embeddings: bool,
    /// Softmax-normalize the sentence weights.
    #[arg(long)]
    normalize_sentence_weights: bool,
    /// Picks the default triple strategy: good-vs-bad for selection,
    /// all-pairs for ranking.
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long, value_enum)]
    triples: Option<TripleArg>,
    /// Triples per question for `--triples sampled`.
    #[arg(long)]
    per_question: Option<usize>,
    #[arg(long)]
    good_threshold: Option<u64>,
    /// Skip the per-epoch training-set evaluation.
    #[arg(long)]
    no_metrics: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = TaskArg::Selection)]
    task: TaskArg,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Only count comparable pairs in the DOA denominator.
    #[arg(long)]
    strict_doa: bool,
    #[arg(long, default_value_t = earnn::corpus::DEFAULT_GOOD_THRESHOLD)]
    good_threshold: u64,
    /// Include per-question metrics in JSON output.
    #[arg(long)]
    per_question: bool,
    /// Re-evaluate for each decay horizon in a decade range, e.g. `1e5..1e9`.
    #[arg(long = "sweep-H", value_name = "FROM..TO")]
    sweep_h: Option<String>,
}

#[derive(Debug, Args)]
struct RankArgs {
    #[arg(long)]
    model: PathBuf,
    /// JSONL with one question record and its answers.
    #[arg(long)]
    input: PathBuf,
    /// Order by the match score alone.
    #[arg(long)]
    no_decay: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct VisualizeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    question: String,
    /// Answer ids (comma separated); all answers when omitted.
    #[arg(long, value_delimiter = ',')]
    answers: Vec<String>,
    #[arg(long)]
    output: PathBuf,
    /// Number of color levels.
    #[arg(long, default_value_t = earnn::heatmap::DEFAULT_RATES as u64, value_parser = clap::value_parser!(u64).range(1..))]
    rates: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FaultArg {
    TanhDeriv,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Variant to check; all three when omitted.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<VariantConfig>,
    /// Deliberately break the backward pass (negative control).
    #[arg(long, value_enum)]
    inject_fault: Option<FaultArg>,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_variant(s: &str) -> Result<VariantConfig, String> {
    s.parse().map_err(|e: earnn::Error| e.to_string())
}

/// A failed command: what to print and how to exit.
#[derive(Debug)]
pub(crate) struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub(crate) fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub(crate) fn verify(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_VERIFY,
            message: message.into(),
        }
    }

    pub(crate) fn io(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_IO,
            message: message.into(),
        }
    }
}

impl From<earnn::Error> for Failure {
    fn from(e: earnn::Error) -> Self {
        use earnn::Error as E;
        let code = match &e {
            E::Io { .. } | E::Parse { .. } | E::InvalidRecord { .. } | E::ModelFile(_) | E::Json(_) => EXIT_IO,
            E::InvalidArgument(_) => EXIT_USAGE,
            E::Shape(_) | E::NonFiniteLoss { .. } => EXIT_VERIFY,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Rank(a) => commands::rank(a),
        Command::Visualize(a) => commands::visualize(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
