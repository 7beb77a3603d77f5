//! `mcsr`: one binary wiring the whole retrieval pipeline — dataset
//! generation, exact labeling, training, evaluation, retrieval, alignment
//! explanations, and self-verification.

mod commands;
mod support;
mod verify;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use mcsr_core::CoreError;

#[derive(Parser)]
#[command(name = "mcsr", version, about = "Graph retrieval by maximum common subgraph")]
struct Cli {
    /// Worker threads for parallel phases (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample corpus and query graph sets from source graphs.
    GenData(GenDataArgs),
    /// Label every (query, corpus) pair with exact MCES/MCCS values.
    Label(LabelArgs),
    /// Train a scoring head on labeled pairs.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the exact oracle) on a query fold.
    Eval(EvalArgs),
    /// Rank the corpus for one query.
    Retrieve(RetrieveArgs),
    /// Export the rounded node alignment and matched edges for one pair.
    Explain(ExplainArgs),
    /// Run a self-check suite; exits non-zero if any property fails.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory (corpus.tsv, queries.tsv, query_seeds.tsv).
    #[arg(long)]
    out: PathBuf,
    /// Source graph dataset to sample from.
    #[arg(long)]
    sources: Option<PathBuf>,
    /// Generate this many synthetic connected source graphs instead of
    /// reading --sources.
    #[arg(long)]
    synthetic_sources: Option<usize>,
    /// Node count of each synthetic source graph.
    #[arg(long, default_value_t = 40)]
    synthetic_source_nodes: usize,
    /// Size profile: desk (100 corpus / 50 queries, 8..12 nodes) or
    /// paper (800 / 500, 10..15 nodes).
    #[arg(long, default_value = "desk")]
    profile: String,
    /// Key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    corpus_count: Option<usize>,
    #[arg(long)]
    query_count: Option<usize>,
    #[arg(long)]
    min_nodes: Option<usize>,
    #[arg(long)]
    max_nodes: Option<usize>,
    #[arg(long)]
    eta_low: Option<f64>,
    #[arg(long)]
    eta_high: Option<f64>,
    #[arg(long)]
    augment_nodes_min: Option<usize>,
    #[arg(long)]
    augment_nodes_max: Option<usize>,
    #[arg(long)]
    augment_edge_prob: Option<f64>,
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Output label file.
    #[arg(long)]
    out: PathBuf,
    /// Fill y_combo = a*y_mccs + (1-a)*y_mces.
    #[arg(long)]
    combo_a: Option<f64>,
    /// Node-expansion budget per exact solve.
    #[arg(long, default_value_t = mcsr_core::oracle::DEFAULT_BUDGET)]
    budget: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// lmces | lmccs | xmcs | combo | baseline
    #[arg(long)]
    model: String,
    /// mces | mccs | combo
    #[arg(long)]
    target: String,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Output directory (checkpoint.json, history.tsv).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Train/val/test fractions, e.g. "0.6,0.2,0.2".
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    node_dim: Option<usize>,
    #[arg(long)]
    msg_dim: Option<usize>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    sinkhorn_iterations: Option<usize>,
    /// Noise filter temperature; overrides --dataset-tag defaults.
    #[arg(long)]
    lambda: Option<f64>,
    /// Known dataset tag (MSRC, MM, FR, MR, FM, COX, DD) with a stored
    /// default temperature.
    #[arg(long)]
    dataset_tag: Option<String>,
    /// Tune the temperature over --lambda-grid by validation MSE.
    #[arg(long, default_value_t = false)]
    tune_lambda: bool,
    /// Comma-separated temperatures for --tune-lambda.
    #[arg(long, default_value = "0.05,0.1,0.5,1,5,50")]
    lambda_grid: String,
    /// Gossip rounds (default: padded graph size).
    #[arg(long)]
    gossip_t: Option<usize>,
    /// Divide the gossip state by its maximum after every round.
    #[arg(long, default_value_t = false)]
    gossip_rescale: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Score with the exact labels instead of a model (self-consistency).
    #[arg(long, default_value_t = false)]
    oracle: bool,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Output directory (report.tsv, scores.tsv).
    #[arg(long)]
    out: PathBuf,
    /// train | val | test | all (default test).
    #[arg(long, default_value = "test")]
    split: String,
    /// Evaluation target when --oracle without a checkpoint.
    #[arg(long)]
    target: Option<String>,
    /// Kendall tau variant: b (tie-corrected, default) or a.
    #[arg(long, default_value = "b")]
    tau: String,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Rank by exact labels instead of a model.
    #[arg(long, default_value_t = false)]
    oracle: bool,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    query_id: String,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Output ranking file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    query_id: String,
    #[arg(long)]
    corpus_id: String,
    /// Output alignment file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// gradcheck | gossip | oracle | sinkhorn | invariants | all
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("invalid arguments");
            eprintln!("usage-error: {first}");
            std::process::exit(2);
        }
    };
    if let Some(workers) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
        {
            eprintln!("config-error: worker pool: {e}");
            std::process::exit(1);
        }
    }
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data(args),
        Command::Label(args) => commands::label(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Retrieve(args) => commands::retrieve(args),
        Command::Explain(args) => commands::explain(args),
        Command::Verify(args) => verify::run(args),
    };
    if let Err(e) = result {
        eprintln!("{}: {e}", e.class());
        std::process::exit(1);
    }
}

pub(crate) type CliResult = Result<(), CoreError>;
