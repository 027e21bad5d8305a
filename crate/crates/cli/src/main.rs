//! `chardep` command-line interface.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use chardep::Error;

#[derive(Debug, Parser)]
#[command(name = "chardep", version, about = "Graph-based dependency parser with character-level word models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a parser and write the archive, training log and resolved config.
    Train(TrainArgs),
    /// Parse CoNLL-U input, replacing the HEAD and DEPREL columns.
    Parse(ParseArgs),
    /// Score predicted against gold CoNLL-U.
    Evaluate(EvaluateArgs),
    /// Train a diagnostic classifier on frozen parser representations.
    Probe(ProbeArgs),
    /// Train the case tagger and write case-augmented treebanks.
    TagCase(TagCaseArgs),
    /// Error analyses over parser predictions.
    Analyze(AnalyzeArgs),
}

/// Configuration file, overrides and the shortcuts for common keys.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML file with flat `key = value` settings.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set epochs=10`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// word, char-lstm, char-cnn, trigram-lstm or oracle.
    #[arg(long)]
    encoder: Option<String>,
    /// none, gold-case, predicted-case or mtl.
    #[arg(long)]
    augmentation: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Directory against which relative treebank paths that do not exist
    /// in the working directory are resolved.
    #[arg(long, env = "CHARDEP_DATA_DIR")]
    data_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ParseArgs {
    /// Parser archive.
    #[arg(long, short)]
    model: PathBuf,
    /// CoNLL-U input; standard input when omitted.
    input: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Supply each token's gold case to a case-augmented parser.
    #[arg(long)]
    gold_case: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Tsv,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    gold: PathBuf,
    pred: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    /// Parser archive.
    #[arg(long, short)]
    model: PathBuf,
    /// Treebank the probe is trained on.
    #[arg(long)]
    treebank: PathBuf,
    /// Held-out treebank; the last quarter of `--treebank` when omitted.
    #[arg(long)]
    eval: Option<PathBuf>,
    /// case, gender, number or all.
    #[arg(long, default_value = "case")]
    feature: String,
    /// embedding or encoder.
    #[arg(long, default_value = "embedding")]
    source: String,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write the report here as well as to standard output.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TagCaseArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AnalysisMode {
    Oov,
    Ambiguity,
    PerPos,
    ConfusionDiff,
    Attention,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(value_enum)]
    mode: AnalysisMode,
    #[arg(long)]
    gold: PathBuf,
    /// Predictions of the first (or only) model.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Predictions of the second model, for confusion-diff.
    #[arg(long)]
    pred_b: Option<PathBuf>,
    /// Training treebank defining vocabulary and ambiguity.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Attention parser archive, for attention mode.
    #[arg(long, short)]
    model: Option<PathBuf>,
    /// Vocabulary cap used for OOV membership.
    #[arg(long, default_value_t = chardep::data::DEFAULT_WORD_CAP)]
    word_cap: usize,
    /// Output directory; standard output when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn exit_code(error: &Error) -> u8 {
    match error {
        Error::Config(_) | Error::Argument(_) => 2,
        Error::Archive(_) | Error::ArchiveVersion { .. } => 4,
        Error::Parse { .. } | Error::Data(_) | Error::Alignment(_) | Error::Io(_) | Error::Shape { .. } => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Parse(a) => commands::parse(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Probe(a) => commands::probe(a),
        Command::TagCase(a) => commands::tag_case(a),
        Command::Analyze(a) => commands::analyze(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("chardep: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
