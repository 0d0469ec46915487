//! `dupdist`: train and inspect the duplicate bug-report model from
//! the shell. One subcommand per pipeline stage; every artifact embeds
//! the hash of the run manifest that produced it.

mod commands;
mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dupdist_core::config::{CondAttnMode, SimSign};

#[derive(Parser)]
#[command(name = "dupdist", version, about = "Duplicate bug-report detection and topic clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a dataset into jsonl and report corpus statistics
    Ingest(IngestArgs),
    /// Generate a synthetic labeled corpus
    Synth(SynthArgs),
    /// Sample labeled report pairs from a corpus
    PairsGen(PairsGenArgs),
    /// Train the model, one trial per seed
    Train(TrainArgs),
    /// Score a checkpoint on a labeled pairs file
    Eval(EvalArgs),
    /// K-means over report topic vectors
    Cluster(ClusterArgs),
    /// Tf-idf n-gram logistic-regression baseline
    Baseline(BaselineArgs),
    /// Attention weights for one report pair
    Attention(AttentionArgs),
}

#[derive(Args)]
struct DatasetArgs {
    /// Input dataset file
    #[arg(long)]
    dataset: PathBuf,
    /// Dataset file format
    #[arg(long, value_enum, default_value_t = FormatArg::Jsonl)]
    format: FormatArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    #[value(name = "bugrepo-csv")]
    BugrepoCsv,
    #[value(name = "jsonl")]
    Jsonl,
}

impl From<FormatArg> for dupdist_core::corpus::io::DatasetFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::BugrepoCsv => Self::BugrepoCsv,
            FormatArg::Jsonl => Self::Jsonl,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SimSignArg {
    #[value(name = "corrected")]
    Corrected,
    #[value(name = "literal")]
    Literal,
}

impl From<SimSignArg> for SimSign {
    fn from(s: SimSignArg) -> Self {
        match s {
            SimSignArg::Corrected => SimSign::Corrected,
            SimSignArg::Literal => SimSign::Literal,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CondAttnArg {
    #[value(name = "per_dim")]
    PerDim,
    #[value(name = "scalar_dot")]
    ScalarDot,
}

impl From<CondAttnArg> for CondAttnMode {
    fn from(c: CondAttnArg) -> Self {
        match c {
            CondAttnArg::PerDim => CondAttnMode::PerDim,
            CondAttnArg::ScalarDot => CondAttnMode::ScalarDot,
        }
    }
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Words seen fewer times map to the unknown token
    #[arg(long, default_value_t = 1)]
    min_freq: usize,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of latent topics
    #[arg(long, default_value_t = 5)]
    topics: usize,
    /// Reports generated per topic
    #[arg(long, default_value_t = 40)]
    per_topic: usize,
    /// Fraction of each topic's reports that are duplicates
    #[arg(long, default_value_t = 0.2)]
    dup_rate: f64,
    /// Distinct keywords per topic
    #[arg(long, default_value_t = 3)]
    vocab_per_topic: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct PairsGenArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Target fraction of duplicate pairs
    #[arg(long, default_value_t = 0.14)]
    dup_fraction: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Hyperparameter JSON file; flags below override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trial seed; repeat for multi-trial averaging
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Pre-generated pairs file; omitted means pairs are sampled here
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Weight between topic-similarity and duplicate losses
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum)]
    sim_sign: Option<SimSignArg>,
    #[arg(long, value_enum)]
    cond_attn: Option<CondAttnArg>,
    /// Target duplicate fraction when sampling pairs
    #[arg(long)]
    dup_fraction: Option<f64>,
    /// Pretrained word vectors ("word v1 .. vd" lines)
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Keep the embedding table fixed during training
    #[arg(long, default_value_t = false)]
    freeze_embeddings: bool,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Labeled pairs file to score
    #[arg(long)]
    pairs: PathBuf,
    /// Must match the checkpoint's stored hyperparameters
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum)]
    sim_sign: Option<SimSignArg>,
    #[arg(long, value_enum)]
    cond_attn: Option<CondAttnArg>,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Restrict clustering to reports appearing in this pairs file
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Cluster every report, ignoring --pairs
    #[arg(long, default_value_t = false)]
    all: bool,
    /// Number of clusters
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write a Graphviz DOT rendering of the cluster-feature map
    #[arg(long)]
    dot: Option<PathBuf>,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Pre-generated pairs file; omitted means pairs are sampled here
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Target duplicate fraction when sampling pairs
    #[arg(long, default_value_t = 0.14)]
    dup_fraction: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Disable inverse-frequency class weighting
    #[arg(long, default_value_t = false)]
    unweighted: bool,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct AttentionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    dataset: DatasetArgs,
    /// First report id
    #[arg(long)]
    p_id: String,
    /// Second report id
    #[arg(long)]
    q_id: String,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(args) => commands::ingest(args),
        Command::Synth(args) => commands::synth(args),
        Command::PairsGen(args) => commands::pairs_gen(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Cluster(args) => commands::cluster(args),
        Command::Baseline(args) => commands::baseline(args),
        Command::Attention(args) => commands::attention(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
