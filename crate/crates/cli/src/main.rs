//! `icca`: run repeated reference games and measure the results.
//!
//! Exit codes: 0 success, 1 partial results, 2 usage or configuration error.

mod commands;
mod report;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use icca::agents::AgentSpec;
use icca::promptkit::VariantName;

#[derive(Debug, Parser)]
#[command(name = "icca", version, about = "Repeated reference games between models and simulated partners")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Play games and write transcripts.
    Run(RunArgs),
    /// Compute per-repetition metrics from transcripts or a corpus.
    Score(ScoreArgs),
    /// Draw SVG charts and a summary table from metrics CSVs.
    Report(ReportArgs),
    /// Compare a scorer's preference for repeated versus original messages.
    RepeatTest(RepeatArgs),
    /// Convert raw logs, or synthetic games, into a corpus.
    Import(ImportArgs),
    /// Check a corpus, templates and adapter configs.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML run settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a setting, e.g. --set jobs=4. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub variant: Option<VariantName>,
    #[arg(long)]
    pub speaker: Option<AgentSpec>,
    #[arg(long)]
    pub listener: Option<AgentSpec>,
    /// Corpus manifest.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Synthetic profile: converging, repeating or random.
    #[arg(long)]
    pub synthetic: Option<String>,
    /// Number of synthetic games.
    #[arg(long)]
    pub count: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Show each display as one 2x2 grid image.
    #[arg(long)]
    pub grid: bool,
    #[arg(long)]
    pub adapters: Option<PathBuf>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Directory of transcripts, or a run directory containing `transcripts/`.
    pub transcripts: Option<PathBuf>,
    /// Score a corpus manifest instead of transcripts.
    #[arg(long, conflicts_with = "transcripts")]
    pub corpus: Option<PathBuf>,
    /// Output directory (default: the input directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Word vectors in GloVe text format, for SIMILARITY.
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    /// Stoplist file, one word per line.
    #[arg(long)]
    pub stoplist: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0.95)]
    pub confidence: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics CSV files; each becomes one line per chart.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Legend names, in input order (default: derived from the path).
    #[arg(long = "label")]
    pub labels: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RepeatArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub synthetic: Option<String>,
    #[arg(long, default_value_t = 54)]
    pub count: u64,
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
    /// Scoring agent, e.g. scripted:scorer=0.1 or adapter:NAME.
    #[arg(long)]
    pub scorer: AgentSpec,
    #[arg(long, default_value = "adapters")]
    pub adapters: PathBuf,
    /// Score text without the context images.
    #[arg(long)]
    pub text_only: bool,
    /// Stats JSON path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// Directory of raw logs.
    #[arg(long, requires = "mapping", conflicts_with = "synthetic")]
    pub raw: Option<PathBuf>,
    /// TOML column mapping for --raw.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// Write synthetic games of this profile instead.
    #[arg(long)]
    pub synthetic: Option<String>,
    #[arg(long, default_value_t = 20)]
    pub count: u64,
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Template directory to check.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Adapter config files to check.
    #[arg(long = "adapter")]
    pub adapters: Vec<PathBuf>,
    /// Run settings file to check.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// How a command finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Partial,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Run(a) => commands::run(a),
        Command::Score(a) => commands::score(a),
        Command::Report(a) => commands::report(a),
        Command::RepeatTest(a) => commands::repeat_test(a),
        Command::Import(a) => commands::import(a),
        Command::Validate(a) => commands::validate(a),
    };
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
