//! `gdsr`: command-line entry point for the retrieval pipeline.
//!
//! Exit codes: 0 on success, 1 when flags or inputs are invalid, 2 when a
//! valid run fails.

mod commands;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gdsr_core::corpus::Split;
use gdsr_core::graph::GnnArch;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "gdsr", version, about = "Graph-augmented dense statute retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a corpus (and queries) and export the heading graph and qrels.
    Ingest(IngestArgs),
    /// TF-IDF similarity between consecutive articles of one code.
    AnalyzeNeighbors(NeighborArgs),
    /// BM25 indexing, search and (k1, b) grid tuning.
    #[command(subcommand)]
    Bm25(Bm25Command),
    /// Encode articles (and optionally queries) to embedding files.
    Embed(EmbedArgs),
    /// Train the bi-encoder.
    TrainDsr(TrainDsrArgs),
    /// Train the graph encoder on top of a trained bi-encoder.
    TrainLge(TrainLgeArgs),
    /// Dense retrieval with a bi-encoder, optionally graph-enriched.
    Retrieve(RetrieveArgs),
    /// Score a TREC run against qrels.
    Evaluate(EvaluateArgs),
    /// Side-by-side table of evaluation reports.
    Compare(CompareArgs),
    /// Write the synthetic statute fixture.
    GenFixture(GenFixtureArgs),
}

#[derive(Subcommand, Debug)]
enum Bm25Command {
    Index(Bm25IndexArgs),
    Search(Bm25SearchArgs),
    Tune(Bm25TuneArgs),
}

#[derive(Args, Debug, Serialize)]
struct OutArgs {
    /// Output directory, created once the command has finished.
    #[arg(long)]
    out: PathBuf,
    /// Replace an existing output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug, Serialize)]
struct ConfigArgs {
    /// Run config as JSON; keys it leaves out keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random choice. Takes precedence over GDSR_SEED.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
struct LexicalFlags {
    /// Stopword list, one word per line. Defaults to the bundled French list.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Light suffix stemming.
    #[arg(long)]
    stem: bool,
}

#[derive(Args, Debug, Serialize)]
struct IngestArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct NeighborArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Root heading of the code; defaults to the first code in the corpus.
    #[arg(long)]
    code: Option<String>,
    #[arg(long, default_value_t = 0)]
    start: usize,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[command(flatten)]
    lexical: LexicalFlags,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct Bm25IndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 2.5)]
    k1: f64,
    #[arg(long, default_value_t = 0.2)]
    b: f64,
    #[command(flatten)]
    lexical: LexicalFlags,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct Bm25SearchArgs {
    /// `index.json` written by `bm25 index`.
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value = "dev", value_parser = parse_split)]
    split: Split,
    #[arg(long, default_value_t = 500)]
    k: usize,
    #[arg(long, default_value = "bm25")]
    tag: String,
    #[command(flatten)]
    lexical: LexicalFlags,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct Bm25TuneArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value = "dev", value_parser = parse_split)]
    split: Split,
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,1.5,2,2.5,3")]
    k1_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")]
    b_grid: Vec<f64>,
    /// R@k, RP or AP.
    #[arg(long, default_value = "R@200")]
    metric: String,
    #[command(flatten)]
    lexical: LexicalFlags,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct EmbedArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory of `train-dsr`. Without it a freshly initialized
    /// encoder is used.
    #[arg(long)]
    dsr: Option<PathBuf>,
    /// Also encode these queries.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct TrainDsrArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct TrainLgeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    /// Output directory of `train-dsr`.
    #[arg(long)]
    dsr: PathBuf,
    /// Output directory of `embed`; its article vectors replace the
    /// encoder's as article node features.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    arch: Option<GnnArch>,
    #[arg(long)]
    layers: Option<usize>,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct RetrieveArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value = "dev", value_parser = parse_split)]
    split: Split,
    #[arg(long)]
    dsr: PathBuf,
    /// Output directory of `train-lge`; enriches article embeddings.
    #[arg(long)]
    lge: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    k: usize,
    /// Run tag; defaults to `dsr` or `gdsr`.
    #[arg(long)]
    tag: Option<String>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "100,200,500")]
    cutoffs: Vec<usize>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct CompareArgs {
    /// `NAME=PATH` of a `report.json`; the first one is the baseline.
    #[arg(long = "report", required = true)]
    reports: Vec<String>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct GenFixtureArgs {
    /// Fixture settings as JSON; keys it leaves out keep their defaults.
    #[arg(long)]
    fixture_config: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: gdsr_core::Error| e.to_string())
}

/// A problem with the flags or inputs rather than with the run itself.
#[derive(Debug)]
pub struct Validation(pub String);

impl fmt::Display for Validation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Validation {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Validation>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<gdsr_core::Error>() {
            return match e {
                gdsr_core::Error::Io(_) | gdsr_core::Error::NonFinite(_) => 2,
                _ => 1,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
