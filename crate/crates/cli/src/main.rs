mod adapters;
mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "damf", version, about = "Domain-adaptive moral foundation classification")]
struct Cli {
    /// Directory holding `<name>.jsonl` corpus files referenced by name.
    #[arg(long, global = true, env = "DAMF_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert an upstream dataset file to the corpus format.
    Convert(ConvertArgs),
    /// Train DAMF or the baseline from a config file or preset.
    Train(TrainArgs),
    /// Score a checkpoint (or the lexicon scorer) on a labeled corpus.
    Evaluate(EvaluateArgs),
    /// Filter a corpus with AFLite.
    FilterAflite(AfliteArgs),
    /// Per-document lexicon-centroid scores.
    Ddr(DdrArgs),
    /// 2-D t-SNE coordinates of document embeddings.
    Tsne(TsneArgs),
    /// Per-class positive fractions of corpora.
    LabelDist(LabelDistArgs),
    /// Aggregate evaluation reports across seeds.
    Report(ReportArgs),
    /// List the bundled hyperparameter presets.
    Presets,
}

#[derive(Args)]
pub struct ConvertArgs {
    /// One of mftc, covid, congress, emfd, synthetic.
    #[arg(long)]
    adapter: String,
    #[arg(long)]
    input: PathBuf,
    /// Output file; a directory for multi-domain synthetic specs.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the config's model kind (damf or baseline).
    #[arg(long)]
    model: Option<String>,
    /// Extra `key=value` config lines, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seeds; one run directory each plus an aggregate.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Corpora (names or paths) to evaluate every run on.
    #[arg(long)]
    test: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long, required_unless_present = "lexicon")]
    checkpoint: Option<PathBuf>,
    #[arg(long, requires = "embeddings", conflicts_with = "checkpoint")]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
pub struct AfliteArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Take the frozen encoder from a training checkpoint instead of a
    /// freshly initialized one.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    partitions: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
pub struct DdrArgs {
    #[arg(long)]
    lexicon: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
pub struct TsneArgs {
    #[arg(long = "corpus", required = true)]
    corpora: Vec<PathBuf>,
    /// Documents drawn from each corpus.
    #[arg(long)]
    sample: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
pub struct LabelDistArgs {
    #[arg(long = "corpus", required = true)]
    corpora: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Report files or directories searched for `report*.json`.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Convert(a) => commands::convert(a),
        Command::Train(a) => commands::train(a, &cli.data_dir),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::FilterAflite(a) => commands::filter_aflite(a),
        Command::Ddr(a) => commands::ddr(a),
        Command::Tsne(a) => commands::tsne(a),
        Command::LabelDist(a) => commands::label_dist(a),
        Command::Report(a) => commands::report(a),
        Command::Presets => commands::presets(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
