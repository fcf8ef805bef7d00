//! `lhgnn`: prepare datasets, train, evaluate, ablate, probe, run baselines
//! and time scaling. Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod commands;
mod dataset;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lhgnn::graph::SplitRatios;

/// A bad invocation; reported with exit code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser)]
#[command(name = "lhgnn", version, about = "Link prediction on latent heterogeneous graphs")]
struct Cli {
    /// Output directory for reports, checkpoints and plots.
    #[arg(long, global = true, env = "LHGNN_OUT_DIR", default_value = "runs")]
    out: PathBuf,
    /// Worker threads; more than 1 enables the parallel regions.
    #[arg(long, global = true, env = "LHGNN_WORKERS", default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a graph and write a prepared dataset directory to --out.
    Prepare(PrepareArgs),
    /// Train a model and write its report, checkpoint and loss curve.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the validation or test queries.
    Eval(EvalArgs),
    /// Train and test ablation variants over several seeds.
    Ablate(AblateArgs),
    /// Classify hidden node types from a checkpoint's embeddings.
    Probe(ProbeArgs),
    /// Train and test a baseline model.
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// Time training epochs on breadth-first subgraphs of growing size.
    Scaling(ScalingArgs),
}

fn parse_ratios(s: &str) -> Result<SplitRatios, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated fractions like 0.8,0.1,0.1, got `{s}`"));
    }
    let mut v = [0.0; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.trim().parse().map_err(|_| format!("`{p}` is not a number"))?;
    }
    SplitRatios::new(v[0], v[1], v[2]).map_err(|e| e.to_string())
}

#[derive(Args)]
struct PrepareArgs {
    /// `head<TAB>tail` edge list.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    edges: Option<PathBuf>,
    /// Feature matrix (text or binary).
    #[arg(long, requires = "edges")]
    features: Option<PathBuf>,
    /// `node_id<TAB>type_label` lines, kept out of the model's view.
    #[arg(long, requires = "edges")]
    labels: Option<PathBuf>,
    /// Generate a synthetic bibliographic graph with this many nodes.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Keep only the first N nodes of a breadth-first search.
    #[arg(long)]
    bfs: Option<usize>,
    /// Raw id of the breadth-first start node; the first node by default.
    #[arg(long, requires = "bfs")]
    bfs_start: Option<String>,
    /// Train, validation and test fractions.
    #[arg(long, value_parser = parse_ratios, default_value = "0.8,0.1,0.1")]
    ratios: SplitRatios,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also sample and cache context paths (config file or defaults).
    #[arg(long)]
    cache_paths: bool,
    /// Path settings for --cache-paths.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Config file and flag overrides; flags win over the file, which wins over
/// the defaults.
#[derive(Args, Clone, Default)]
pub struct ConfigArgs {
    /// TOML training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    semantic_dim: Option<usize>,
    #[arg(long)]
    entity_dim: Option<usize>,
    /// Context paths per node.
    #[arg(long)]
    num_paths: Option<usize>,
    /// Maximum path length.
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    /// Weight of the FiLM norm penalty.
    #[arg(long)]
    film_weight: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    /// Resample context paths every epoch.
    #[arg(long)]
    resample_paths: bool,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum VariantArg {
    Full,
    NoLinkEncoder,
    NoPersonalization,
    Neither,
    All,
}

#[derive(Args)]
struct TrainArgs {
    /// Prepared dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum, default_value = "full")]
    variant: VariantArg,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Val,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Training configuration; `config.toml` beside the checkpoint by default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Prepared dataset; taken from the training report when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum, default_value = "all")]
    variant: VariantArg,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Fraction of labeled nodes per class used for training.
    #[arg(long, default_value_t = 0.6)]
    train_fraction: f64,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Subcommand)]
enum BaselineCommand {
    /// Translational embeddings with K pseudo node types.
    Transe(TransEArgs),
}

#[derive(Args)]
struct TransEArgs {
    #[arg(long)]
    data: PathBuf,
    /// Number of k-means pseudo types; 1 means a single relation.
    #[arg(long, default_value_t = 1)]
    pseudo_k: usize,
    /// Reuse pseudo types from a file written by an earlier run.
    #[arg(long)]
    types: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
}

#[derive(Args)]
struct ScalingArgs {
    /// Prepared dataset to sample from; a synthetic graph when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "5000,10000,20000")]
    sizes: Vec<usize>,
    /// Timed epochs per size.
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[command(flatten)]
    config: ConfigArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(u) = e.downcast_ref::<Usage>() {
                eprintln!("error: {u}");
                ExitCode::from(2)
            } else {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.workers == 0 {
        return Err(Usage("--workers must be at least 1".into()).into());
    }
    if cli.workers > 1 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global()?;
    }
    let ctx = commands::Ctx {
        out: cli.out,
        parallel: cli.workers > 1,
    };
    match cli.command {
        Command::Prepare(a) => commands::prepare(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Ablate(a) => commands::ablate(&ctx, a),
        Command::Probe(a) => commands::probe(&ctx, a),
        Command::Baseline(BaselineCommand::Transe(a)) => commands::transe(&ctx, a),
        Command::Scaling(a) => commands::scaling(&ctx, a),
    }
}
