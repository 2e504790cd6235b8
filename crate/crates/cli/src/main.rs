//! `rasat-graph`: batch driver that serializes, links and compiles
//! interaction graphs for Spider/SParC-style datasets, and self-checks the
//! relation-aware attention kernel.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use relgraph::corpus::DataMode;
use relgraph::serializer::DEFAULT_TOKEN_BUDGET;

use crate::commands::Task;

#[derive(Parser)]
#[command(name = "rasat-graph", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the serialized input sequence of every example turn.
    Serialize(PipelineArgs),
    /// Write schema links and value matches of every example turn.
    Link(PipelineArgs),
    /// Write the interaction graph (JSON and RASM) of every example turn.
    Graph(PipelineArgs),
    /// Print the relation histogram aggregated over the dataset.
    Stats(PipelineArgs),
    /// Run the attention kernel self-checks on random instances.
    AttnCheck(AttnArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Single,
    Multi,
}

#[derive(Args)]
pub struct PipelineArgs {
    /// Spider-format tables.json.
    #[arg(long)]
    schemas: PathBuf,
    /// Dataset file: Spider examples (single) or SParC/CoSQL interactions (multi).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "single")]
    mode: Mode,
    /// Database content: an SQLite file, a JSON value dump, or a directory
    /// holding `{db}/{db}.sqlite`, `{db}.sqlite` or `{db}.json`.
    #[arg(long)]
    content: Option<PathBuf>,
    /// CoNLL-U dependency parses keyed by example index.
    #[arg(long)]
    deps: Option<PathBuf>,
    /// Coreference chains keyed by example index. Disables the pronoun heuristic.
    #[arg(long)]
    coref: Option<PathBuf>,
    /// Subword vocabulary, one piece per line. Enables subtoken matrices.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Token budget for multi-turn sequences.
    #[arg(long, default_value_t = DEFAULT_TOKEN_BUDGET)]
    budget: usize,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accepted for a uniform interface; graph compilation draws no randomness.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl PipelineArgs {
    fn data_mode(&self) -> DataMode {
        match self.mode {
            Mode::Single => DataMode::SingleTurn,
            Mode::Multi => DataMode::MultiTurn,
        }
    }
}

#[derive(Args)]
pub struct AttnArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of random instances.
    #[arg(long, default_value_t = 50)]
    instances: usize,
    /// Directory for `attn_check.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Serialize(args) => commands::run_pipeline(Task::Serialize, &args),
        Command::Link(args) => commands::run_pipeline(Task::Link, &args),
        Command::Graph(args) => commands::run_pipeline(Task::Graph, &args),
        Command::Stats(args) => commands::run_pipeline(Task::Stats, &args),
        Command::AttnCheck(args) => commands::attn_check(&args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
