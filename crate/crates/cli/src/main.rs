//! `locgclstm`: prepare data, train, evaluate, predict, grid-search and
//! compare traffic flow forecasters.

mod commands;
mod config;
mod dataset;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{HyperArgs, SplitArgs};
use locgclstm::graph::AdjacencyOrientation;

#[derive(Parser, Debug)]
#[command(name = "locgclstm", version, about = "Loc-GCLSTM short-term traffic flow forecasting")]
struct Cli {
    /// Seed for initialization, shuffling and fold assignment.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat TOML config file; flags override its values.
    #[arg(long, global = true, env = "LOCGCLSTM_CONFIG")]
    config: Option<PathBuf>,
    /// Directory receiving this command's outputs and manifest.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ingest, impute and window a flow CSV into a sample cache.
    Prepare(PrepareArgs),
    /// Train a network on one split and write checkpoints and history.
    Train(TrainArgs),
    /// Score a checkpoint or baseline and write metric reports.
    Evaluate(EvaluateArgs),
    /// Write predictions for cached samples.
    Predict(PredictArgs),
    /// Train every batch-size/units/layers combination and rank them.
    GridSearch(GridArgs),
    /// Train and score several models side by side.
    Compare(CompareArgs),
    /// Convert a wide METR-LA style export into the long flow schema.
    ConvertMetrLa(ConvertArgs),
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Long-format flow CSV: timestamp,node_id,flow[,speed,density,heavy_ratio,lane_count,weather].
    #[arg(long)]
    pub flow: PathBuf,
    /// Adjacency CSV: dense 0/1 matrix or `src,dst` edge list.
    #[arg(long)]
    pub adjacency: PathBuf,
    /// out: entry (i,j) means i influences j; in: j influences i.
    #[arg(long, default_value = "out")]
    pub orientation: AdjacencyOrientation,
    /// Neighbours used to fill each missing cell.
    #[arg(long, default_value_t = 4)]
    pub knn_k: usize,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, default_value_t = 12)]
    pub lags: usize,
    #[arg(long, default_value_t = 12)]
    pub horizon: usize,
    #[arg(long, default_value_t = 5)]
    pub interval_minutes: u32,
    /// Longest timestamp gap (in intervals) kept inside one span as missing rows.
    #[arg(long, default_value_t = 3)]
    pub max_fill_gap: usize,
    /// Intervals per daily cycle (288 for full days, 252 for 03:00-24:00).
    #[arg(long, default_value_t = 288)]
    pub moment_num: usize,
    /// Minutes after midnight at which the daily cycle starts.
    #[arg(long, default_value_t = 0)]
    pub day_start_minutes: u32,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory written by `prepare`.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Args, Debug, Clone)]
pub struct SourceArgs {
    /// Directory written by `prepare`.
    #[arg(long)]
    pub data: PathBuf,
    /// Trained checkpoint to score.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Baseline to use instead of a checkpoint: persistence or lr.
    #[arg(long, conflicts_with = "checkpoint")]
    pub model: Option<String>,
    /// Which samples: test, train or all.
    #[arg(long)]
    pub subset: Option<String>,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Also write one metrics row per node.
    #[arg(long)]
    pub per_road: bool,
    /// Also write an SVG chart of predicted vs. observed flow.
    #[arg(long)]
    pub chart: bool,
    #[arg(long, default_value_t = 0)]
    pub chart_node: usize,
    /// 1-based horizon step plotted.
    #[arg(long, default_value_t = 1)]
    pub chart_horizon: usize,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub source: SourceArgs,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub batch_sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub units: Vec<usize>,
    /// Total layers: GCN + LSTM layers + dense head.
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<usize>,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated: loc-gclstm, gclstm, lstm, lr, persistence.
    #[arg(long, value_delimiter = ',', default_value = "loc-gclstm,lstm,lr,persistence")]
    pub models: Vec<String>,
    /// Average over every fold instead of scoring one split.
    #[arg(long)]
    pub cv: bool,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    /// Wide CSV: timestamp column followed by one column per sensor.
    #[arg(long)]
    pub input: PathBuf,
    /// Long-format CSV to write.
    #[arg(long)]
    pub output: PathBuf,
}

pub struct Global {
    pub seed: Option<u64>,
    pub config: Option<PathBuf>,
    pub out_dir: PathBuf,
}

/// Failure categories with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(locgclstm::Error),
}

impl From<locgclstm::Error> for CliError {
    fn from(e: locgclstm::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 4,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let global = Global {
        seed: cli.seed,
        config: cli.config,
        out_dir: cli.out_dir,
    };
    let result = match cli.command {
        Command::Prepare(a) => commands::prepare(&global, &a),
        Command::Train(a) => commands::train(&global, &a),
        Command::Evaluate(a) => commands::evaluate(&global, &a),
        Command::Predict(a) => commands::predict(&global, &a),
        Command::GridSearch(a) => commands::grid_search(&global, &a),
        Command::Compare(a) => commands::compare(&global, &a),
        Command::ConvertMetrLa(a) => commands::convert_metr_la(&global, &a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
