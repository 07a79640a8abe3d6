mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{classify, exit_code};

const DEFAULTS: &str = "\
Defaults:
  Reference values, taken from the original method description:
    coherence threshold theta_c = 0.3      seed count S = ceil(sqrt(N))
    lambda_cite = 0.5   lambda_smooth = 0.1   lambda_hier = 0.1
    model d = 256, r = 32, L = 3 layers, K = 4 heads
  Engineering values, chosen for this implementation:
    temperature tau = 0.1   ranking margin m = 1.0   hierarchy margin m_h = 0.1
    pooling ratio rho = 0.1, 3 levels, beam 2k    early-stop window T = 8k
    MMR lambda = 0.7    epsilon = 0.01    k = 10
    train-toy model d = 8, r = 2 (toy scale caps N <= 64, d <= 16, r <= 4)

Settings resolve as flags > environment (GSS_CORPUS) > --config file > defaults.
Every subcommand echoes the resolved settings; passing that echo back through
--config reproduces the run.

Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric failure.";

/// Geodesic semantic search over citation graphs with learned local metrics.
#[derive(Parser, Debug)]
#[command(name = "gss", version, after_help = DEFAULTS)]
struct Cli {
    /// TOML or JSON settings file (a JSON echo of an earlier run works too)
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Cap on worker threads [default: all cores]
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus
    #[command(subcommand)]
    Fixture(FixtureCommand),
    /// Build a corpus from CSV files
    Ingest(IngestArgs),
    /// Train the small attention encoder and export embeddings and factors
    TrainToy(TrainArgs),
    /// Cluster a corpus into a coarse-to-fine hierarchy
    BuildHierarchy(HierarchyArgs),
    /// Run one query through the retrieval pipeline
    Search(SearchArgs),
    /// Score methods against relevance judgments and write a CSV table
    Evaluate(EvaluateArgs),
    /// Measure kernel throughput or search cost
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Subcommand, Debug)]
enum FixtureCommand {
    /// Two node areas joined by a chain; node 0 is the query
    Barbell(BarbellArgs),
    /// Topic clusters with nearest-neighbor citations and a temporal split
    Geometric(GeometricArgs),
    /// Two feature blocks with block-local citations, for training
    TwoBlock(TwoBlockArgs),
}

#[derive(Args, Debug)]
struct SeedOut {
    /// Random seed (required unless set in the config file)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BarbellArgs {
    #[command(flatten)]
    common: SeedOut,
    /// Nodes in the source area, query included [default: 24]
    #[arg(long)]
    source_size: Option<usize>,
    /// Nodes in the target area [default: 25]
    #[arg(long)]
    target_size: Option<usize>,
    /// Hops from the source area to the target area [default: 2]
    #[arg(long)]
    path_len: Option<usize>,
}

#[derive(Args, Debug)]
struct GeometricArgs {
    #[command(flatten)]
    common: SeedOut,
    /// Node count [default: 5000]
    #[arg(long)]
    nodes: Option<usize>,
    /// Embedding dimension [default: 16]
    #[arg(long)]
    dim: Option<usize>,
    /// Factor rank [default: 4]
    #[arg(long)]
    rank: Option<usize>,
    /// Topic count [default: 20]
    #[arg(long)]
    topics: Option<usize>,
    /// Query nodes written to queries.json, taken from the test split [default: 100]
    #[arg(long)]
    queries: Option<usize>,
}

#[derive(Args, Debug)]
struct TwoBlockArgs {
    #[command(flatten)]
    common: SeedOut,
    /// Nodes per block [default: 25]
    #[arg(long)]
    block_size: Option<usize>,
    /// Feature width [default: 8]
    #[arg(long)]
    feature_dim: Option<usize>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Citation edges, one `citing,cited` pair of node ids per line
    #[arg(long, value_name = "CSV")]
    edges: PathBuf,
    /// Node features, one row per node; the row count fixes N
    #[arg(long, value_name = "CSV")]
    features: PathBuf,
    /// Node embeddings, one row per node
    #[arg(long, value_name = "CSV")]
    embeddings: Option<PathBuf>,
    /// Metric factors, one row of d*r values (row-major d x r) per node
    #[arg(long, value_name = "CSV", requires = "rank")]
    factors: Option<PathBuf>,
    /// Factor rank r, required with --factors
    #[arg(long)]
    rank: Option<usize>,
    /// Metric regulariser epsilon [default: 0.01, engineering]
    #[arg(long)]
    epsilon: Option<f64>,
    /// Publication year per node, one per line; enables the temporal split
    #[arg(long, value_name = "CSV", requires_all = ["valid_from", "test_from"])]
    years: Option<PathBuf>,
    /// First validation year
    #[arg(long)]
    valid_from: Option<i32>,
    /// First test year
    #[arg(long)]
    test_from: Option<i32>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CorpusArg {
    /// Corpus manifest or directory
    #[arg(long, env = "GSS_CORPUS", value_name = "PATH")]
    corpus: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArg,
    #[command(flatten)]
    common: SeedOut,
    /// Training epochs [default: 200]
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam learning rate [default: 1e-3]
    #[arg(long)]
    lr: Option<f64>,
    /// Embedding dimension d [default: 8; reference 256]
    #[arg(long)]
    dim: Option<usize>,
    /// Factor rank r [default: 2; reference 32]
    #[arg(long)]
    rank: Option<usize>,
    /// Attention layers L [default: 3, reference]
    #[arg(long)]
    layers: Option<usize>,
    /// Attention heads K [default: 4, reference]
    #[arg(long)]
    heads: Option<usize>,
    /// Contrastive temperature tau [default: 0.1, engineering]
    #[arg(long)]
    temperature: Option<f64>,
    /// Citation loss weight lambda_cite [default: 0.5, reference]
    #[arg(long)]
    lambda_cite: Option<f64>,
    /// Smoothness loss weight lambda_smooth [default: 0.1, reference]
    #[arg(long)]
    lambda_smooth: Option<f64>,
    /// Hierarchy loss weight lambda_hier [default: 0.1, reference]
    #[arg(long)]
    lambda_hier: Option<f64>,
}

#[derive(Args, Debug)]
struct HierarchyArgs {
    #[command(flatten)]
    corpus: CorpusArg,
    #[command(flatten)]
    common: SeedOut,
    /// Pooling ratio rho in (0, 1] [default: 0.1, engineering]
    #[arg(long)]
    rho: Option<f64>,
    /// Level count including the corpus [default: 3, engineering]
    #[arg(long)]
    levels: Option<usize>,
    /// Clusters kept per coarse level while searching [default: 2k, engineering]
    #[arg(long)]
    beam: Option<usize>,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    /// Results to return [default: 10]
    #[arg(short, long)]
    k: Option<usize>,
    /// MMR trade-off lambda in [0, 1] [default: 0.7, engineering]
    #[arg(long)]
    lambda: Option<f64>,
    /// Path coherence threshold theta_c in [-1, 1] [default: 0.3, reference]
    #[arg(long, allow_negative_numbers = true)]
    theta: Option<f64>,
    /// Dijkstra seed count S [default: ceil(sqrt(N)), reference]
    #[arg(long = "seeds", value_name = "S")]
    seed_count: Option<usize>,
    /// Early stop: `off`, `auto` (window 8k) or a window length [default: auto, engineering]
    #[arg(long, value_name = "MODE")]
    early_stop: Option<String>,
    /// Traversal: `symmetric` or `citation` (citing to cited only) [default: symmetric]
    #[arg(long)]
    view: Option<String>,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[command(flatten)]
    corpus: CorpusArg,
    /// Query by node id
    #[arg(long, conflicts_with = "embedding", required_unless_present = "embedding")]
    node: Option<usize>,
    /// Query by a JSON array of d numbers
    #[arg(long, value_name = "FILE")]
    embedding: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Search the whole corpus (the default)
    #[arg(long, conflicts_with = "hier")]
    flat: bool,
    /// Coarse-to-fine search through a hierarchy built by `build-hierarchy`
    #[arg(long, value_name = "DIR")]
    hier: Option<PathBuf>,
    /// Override the hierarchy's beam width
    #[arg(long, requires = "hier")]
    beam: Option<usize>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    corpus: CorpusArg,
    /// JSON array of query node ids
    #[arg(long, value_name = "FILE")]
    queries: PathBuf,
    /// JSON object: query id -> {relevant id -> gain}
    #[arg(long, value_name = "FILE")]
    judgments: PathBuf,
    /// Comma-separated: cosine, geodesic-flat, geodesic-hier, euclidean
    /// [default: cosine,geodesic-flat,geodesic-hier]
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Number of runs, seeded 0..N (required unless set in the config file)
    #[arg(long = "seeds", value_name = "N")]
    runs: Option<u64>,
    /// Cutoff k [default: 10]
    #[arg(short, long)]
    k: Option<usize>,
    /// Record per-query latency (makes the table run-dependent)
    #[arg(long)]
    timing: bool,
    /// CSV output file
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum BenchCommand {
    /// Distance-kernel throughput, low-rank form against the dense metric
    Metric(BenchMetricArgs),
    /// Settled nodes and latency percentiles of flat and hierarchical search
    Dijkstra(BenchDijkstraArgs),
}

#[derive(Args, Debug)]
struct BenchMetricArgs {
    /// Random seed (required unless set in the config file)
    #[arg(long)]
    seed: Option<u64>,
    /// Dimension d
    #[arg(long, default_value_t = 256)]
    dim: usize,
    /// Rank r
    #[arg(long, default_value_t = 32)]
    rank: usize,
    /// Distance evaluations timed per kernel
    #[arg(long, default_value_t = 20_000)]
    evals: usize,
}

#[derive(Args, Debug)]
struct BenchDijkstraArgs {
    #[command(flatten)]
    corpus: CorpusArg,
    /// Random seed for query sampling (required unless set in the config file)
    #[arg(long)]
    seed: Option<u64>,
    /// Query nodes sampled
    #[arg(long, default_value_t = 100)]
    queries: usize,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Also time coarse-to-fine search through this hierarchy
    #[arg(long, value_name = "DIR")]
    hier: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let class = classify(&err);
            let code = exit_code(class);
            let report = serde_json::json!({
                "error": {
                    "class": format!("{class:?}").to_lowercase(),
                    "exit_code": code,
                    "message": config::message(&err),
                }
            });
            eprintln!("{report}");
            ExitCode::from(code as u8)
        }
    }
}
