mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use curatornet::ablation::ModelKind;

#[derive(Parser, Debug)]
#[command(name = "curatornet", version, about = "Visually-aware art recommendation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load embeddings and transactions, hold out last baskets, write a data directory.
    Ingest(IngestArgs),
    /// PCA + k-means over the item embeddings.
    Cluster(ClusterArgs),
    /// Build training and validation triples.
    Sample(SampleArgs),
    /// Train CuratorNet or VBPR on the sampled triples.
    Train(TrainArgs),
    /// Score the held-out baskets.
    Eval(EvalArgs),
    /// Top-k items for an ad-hoc profile.
    Recommend(RecommendArgs),
    /// Guideline triples versus random negatives over several seeds.
    Ablation(AblationArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub transactions: PathBuf,
    /// `item_id \t artist_id` table.
    #[arg(long)]
    pub artists: Option<PathBuf>,
    #[arg(long, default_value_t = curatornet::data::EMBEDDING_DIM)]
    pub dim: usize,
    /// Treat every transaction row as its own basket.
    #[arg(long)]
    pub one_item_baskets: bool,
    #[arg(long)]
    pub data_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long, default_value_t = 200)]
    pub pca_dim: usize,
    #[arg(long, default_value_t = 20)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Defaults to 1-6, without 3 and 6 when there is no artist metadata.
    #[arg(long, value_delimiter = ',')]
    pub strategies: Option<Vec<u8>>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub valid_count: Option<usize>,
    /// 10M training and 300K validation triples.
    #[arg(long)]
    pub paper_scale: bool,
    /// Random negatives skip users with a single purchase.
    #[arg(long)]
    pub skip_singletons: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct Hyper {
    #[arg(long, default_value_t = 1e-4)]
    pub lambda: f64,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long, default_value = "curatornet", value_parser = parse_model)]
    pub model: ModelKind,
    /// Train only on triples of these strategies (VBPR defaults to 3,4).
    #[arg(long, value_delimiter = ',')]
    pub strategies: Option<Vec<u8>>,
    #[command(flatten)]
    pub hyper: Hyper,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint path; defaults to `<data-dir>/<model>.cnet`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Any of curatornet, vbpr, visrank, random, oracle; defaults to every
    /// method whose inputs exist.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',', default_values_t = [20usize, 100])]
    pub topk: Vec<usize>,
    /// Seed of the random baseline.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report directory; defaults to the data directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RecommendArgs {
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Comma-separated item ids.
    #[arg(long, value_delimiter = ',', required = true)]
    pub profile: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [20usize])]
    pub topk: Vec<usize>,
    /// Defaults to `<data-dir>/curatornet.cnet`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Manifest directory; defaults to the data directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblationArgs {
    /// Ingested and clustered data; omit with `--synthetic`.
    #[arg(long, required_unless_present = "synthetic")]
    pub data_dir: Option<PathBuf>,
    /// Run on the built-in planted-preference dataset.
    #[arg(long, conflicts_with = "data_dir")]
    pub synthetic: bool,
    #[arg(long, default_value = "curatornet", value_parser = parse_model)]
    pub model: ModelKind,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',')]
    pub strategies: Option<Vec<u8>>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub valid_count: Option<usize>,
    #[command(flatten)]
    pub hyper: Hyper,
    #[arg(long)]
    pub skip_singletons: bool,
    /// Full-scale triple counts and layer widths.
    #[arg(long)]
    pub paper_scale: bool,
    /// Report directory; defaults to the data directory or `.`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: curatornet::Error| e.to_string())
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("CURATORNET_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .with_context(|| format!("CURATORNET_THREADS={value:?} is not a positive integer"))?;
    if n == 0 {
        bail!("CURATORNET_THREADS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Cluster(a) => commands::cluster(&a),
        Command::Sample(a) => commands::sample(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Recommend(a) => commands::recommend(&a),
        Command::Ablation(a) => commands::ablation(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
