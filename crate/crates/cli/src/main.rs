//! Command-line experiments: dataset generation, training, approximation,
//! evaluation, benchmarking and sweep curves.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "lrcnn", version, about = "Low-rank separable approximation of CNN layers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic glyph dataset.
    GenData(GenData),
    /// Train the test-model architecture.
    Train(Train),
    /// Print background-ignoring accuracy.
    Eval(Eval),
    /// Replace convolutions by separable approximations.
    Approximate(Approximate),
    /// Per-layer forward timings.
    Bench(Bench),
    /// Speedup versus error and accuracy over a capacity sweep.
    Curve(Curve),
    /// Maximum character response over a grayscale image.
    Detmap(Detmap),
    /// Layer shapes, parameter counts and MAC counts.
    Inspect(Inspect),
}

#[derive(Args)]
struct GenData {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    /// Share of background patches in the output.
    #[arg(long, default_value_t = 0.1)]
    background_fraction: f64,
    /// Split tag stored in the file: train or test.
    #[arg(long, default_value = "train")]
    split: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    data: PathBuf,
    /// Held-out set used for the learning-rate schedule.
    #[arg(long)]
    heldout: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    /// Loss log CSV; defaults to the model path with `.log.csv` appended.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args, Clone)]
struct ReconArgs {
    /// Samples drawn from --data for data reconstruction.
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value_t = 20)]
    recon_epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    recon_lr: f64,
    #[arg(long, default_value_t = 0)]
    recon_seed: u64,
}

#[derive(Args)]
struct Approximate {
    #[arg(long)]
    model: PathBuf,
    /// Layer name (conv2) or comma-separated list.
    #[arg(long)]
    layer: String,
    #[arg(long)]
    scheme: String,
    /// M or K; one value for all layers or one per layer.
    #[arg(long)]
    capacity: String,
    #[arg(long, default_value = "filter")]
    optimizer: String,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Allow approximating the first and last convolutions.
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    recon: ReconArgs,
}

#[derive(Args)]
struct Bench {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 20)]
    runs: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
}

#[derive(Args)]
struct Curve {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    layer: String,
    #[arg(long)]
    scheme: String,
    #[arg(long)]
    capacities: String,
    #[arg(long, default_value = "filter")]
    optimizer: String,
    /// Reconstruction samples (and evaluation data when --test is absent).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    /// Reconstruct from this many Gaussian-noise images instead of --data.
    #[arg(long)]
    noise_probe: Option<usize>,
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    recon: ReconArgs,
}

#[derive(Args)]
struct Detmap {
    #[arg(long)]
    model: PathBuf,
    /// Binary PGM (P5) image.
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Inspect {
    #[arg(long)]
    model: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = commands::init_threads().and_then(|()| match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Approximate(a) => commands::approximate(a),
        Command::Bench(a) => commands::bench(a),
        Command::Curve(a) => commands::curve(a),
        Command::Detmap(a) => commands::detmap(a),
        Command::Inspect(a) => commands::inspect(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
