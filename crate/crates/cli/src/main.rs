use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use skan::harness::Optimizer;
use skan::{SFuncKind, SkanError};

mod commands;
mod plots;

/// Flag or configuration problem detected by the CLI itself.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(name = "skan", version, about = "Train and benchmark single-parameterized KANs on MNIST")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network and write its metrics, checkpoint and summary.
    Train(TrainArgs),
    /// Learning-rate grid search over repeated seeded runs.
    Sweep(SweepArgs),
    /// Evaluate a checkpoint on the MNIST test set.
    Eval(EvalArgs),
    /// Render SVG charts from result CSVs.
    Plots(PlotsArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Precision {
    F64,
}

fn parse_kind(s: &str) -> Result<SFuncKind, String> {
    s.parse().map_err(|e: SkanError| e.to_string())
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Directory with the four MNIST IDX files (optionally .gz).
    #[arg(long, env = skan::data::MNIST_DIR_ENV, default_value = "data/mnist")]
    pub mnist_dir: PathBuf,
    /// Train on the first N samples after a seeded shuffle.
    #[arg(long)]
    pub subset: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub subset_seed: u64,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Layer widths, input first.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "784,100,10")]
    pub arch: Vec<usize>,
    #[arg(long, default_value_t = skan::harness::DEFAULT_BATCH)]
    pub batch: usize,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_kind)]
    pub sfunc: SFuncKind,
    #[arg(long, default_value_t = 0.002)]
    pub lr: f64,
    #[arg(long, default_value_t = skan::harness::DEFAULT_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    /// Checkpoint path; defaults to `<out>/<run>.ckpt.json`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

impl From<OptimizerArg> for Optimizer {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Adam => Optimizer::Adam,
            OptimizerArg::Sgd => Optimizer::Sgd,
        }
    }
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, value_parser = parse_kind, default_value = "lsin,lcos,larctan")]
    pub sfuncs: Vec<SFuncKind>,
    /// Learning rates; defaults to the 19-point grid 1e-4..9e-4, 1e-3..1e-2.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    pub lrs: Option<Vec<f64>>,
    #[arg(long, default_value_t = skan::harness::DEFAULT_REPEATS)]
    pub repeats: usize,
    #[arg(long, default_value_t = skan::harness::DEFAULT_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub base_seed: u64,
    /// Maximum number of runs trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Re-use completed runs found in `<out>/sweep.csv`.
    #[arg(long)]
    pub resume: bool,
    /// Print the run plan without training.
    #[arg(long)]
    pub dry_run: bool,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, env = skan::data::MNIST_DIR_ENV, default_value = "data/mnist")]
    pub mnist_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct PlotsArgs {
    /// Result CSVs written by `train` or `sweep`.
    #[arg(long = "csv", default_value = "results/sweep.csv")]
    pub csvs: Vec<PathBuf>,
    #[arg(long, default_value = "results/plots")]
    pub out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<SkanError>() {
            return match e {
                SkanError::Config(_) => EXIT_USAGE,
                SkanError::Io(_)
                | SkanError::Format(_)
                | SkanError::Length { .. }
                | SkanError::Data(_)
                | SkanError::EmptyDataset
                | SkanError::Csv(_)
                | SkanError::Json(_) => EXIT_DATA,
                _ => EXIT_RUNTIME,
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_DATA;
        }
    }
    EXIT_RUNTIME
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => commands::train(args),
        Command::Sweep(args) => commands::sweep(args),
        Command::Eval(args) => commands::eval(args),
        Command::Plots(args) => plots::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
