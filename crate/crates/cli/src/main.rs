use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod data;
mod selftest;

/// Rotation-invariant CNN toolkit: polar conversion, training, evaluation,
/// receptive fields, benchmarks and self-checks.
#[derive(Debug, Parser)]
#[command(name = "cycnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert a PGM/PPM image to its polar or log-polar representation.
    Polar(PolarArgs),
    /// Train a model and write a checkpoint plus a metrics CSV.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test set.
    Eval(EvalArgs),
    /// Print receptive-field sizes through a layer stack.
    Rf(RfArgs),
    /// Time the convolution paths.
    Bench(BenchArgs),
    /// Run the built-in equivalence and equivariance checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct PolarArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "polar")]
    pub mode: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub rho_max: Option<f64>,
    /// Output size as HxW; defaults to the input size.
    #[arg(long)]
    pub size: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// mnist | cifar10 | synth
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<String>,
    /// base | p | lp | cy-p | cy-lp
    #[arg(long)]
    pub variant: Option<String>,
    /// none | r | t | rt
    #[arg(long)]
    pub augment: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Metrics CSV path; defaults to the checkpoint path with `.csv` appended.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Maximum number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr0: Option<f64>,
    /// Channels of the first convolution block.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// direct | winograd
    #[arg(long)]
    pub algorithm: Option<String>,
    /// Use only the first N training images.
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Number of synthetic training images.
    #[arg(long)]
    pub synth_count: Option<usize>,
    #[arg(long)]
    pub synth_classes: Option<usize>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub dataset: String,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Rotate every test image by a random angle.
    #[arg(long)]
    pub rotate_test: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// test | train
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub synth_count: Option<usize>,
    #[arg(long)]
    pub synth_classes: Option<usize>,
    /// Write the per-class CSV here instead of stdout.
    #[arg(long)]
    pub per_class: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RfArgs {
    /// Comma-separated `KWxKH/SWxSH` entries, first layer first, e.g.
    /// `3x3/1x1,2x2/2x2`.
    #[arg(long, conflicts_with = "arch")]
    pub layers: Option<String>,
    /// Use the MiniVGG stack for 32x32 inputs.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub csv: bool,
    /// Output region to trace back, as WxH.
    #[arg(long, default_value = "1x1")]
    pub region: String,
    /// Also report boundary-row coverage for an input of this height.
    #[arg(long)]
    pub coverage_height: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// `NxCxHxW->O`; repeatable.
    #[arg(long = "geometry")]
    pub geometries: Vec<String>,
    /// Subset of direct-zero,direct-cylindrical,winograd,cywino.
    #[arg(long, value_delimiter = ',')]
    pub algorithms: Vec<String>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// single | double
    #[arg(long, default_value = "double")]
    pub precision: String,
    /// Test hook: corrupt a component to check that the suite notices.
    #[arg(long)]
    pub inject_fault: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// An error that means a check failed rather than that the command could
/// not run.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

/// Prints the error chain, skipping causes the outer message already quotes.
fn report(e: &anyhow::Error) {
    let mut line = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !line.contains(&msg) {
            if !line.is_empty() {
                line.push_str(": ");
            }
            line.push_str(&msg);
        }
    }
    eprintln!("error: {line}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Polar(a) => commands::polar(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Rf(a) => commands::rf(a),
        Command::Bench(a) => commands::bench(a),
        Command::Selftest(a) => selftest::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<CheckFailed>().is_some() => {
            report(&e);
            ExitCode::from(1)
        }
        Err(e) => {
            report(&e);
            ExitCode::from(2)
        }
    }
}
