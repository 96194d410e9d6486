mod commands;
mod failure;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use failure::EXIT_USAGE;

#[derive(Debug, Parser)]
#[command(name = "biasguard", version, about = "Generalized zero-shot classification with a dual-branch VAE-GAN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic seen/unseen dataset with a train/test split.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on the test split of a dataset.
    Eval(EvalArgs),
    /// Train and evaluate every row of a configuration grid.
    Ablate(AblateArgs),
    /// Predict classes for raw visual feature rows.
    Classify(ClassifyArgs),
    /// Summarize a dataset, checkpoint or table and print its run manifest.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Optional key=value file with synth keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    unseen: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    /// Visual feature width.
    #[arg(long)]
    dim: Option<usize>,
    /// Semantic vector width.
    #[arg(long)]
    semantic_dim: Option<usize>,
    /// Length of the offset applied to unseen class means.
    #[arg(long)]
    bias: Option<f64>,
    #[arg(long)]
    cluster_scale: Option<f64>,
    #[arg(long)]
    anisotropy: Option<f64>,
    /// Share of each seen class held out for testing.
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; `.bin` or `.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Feature file, `.bin` or `.csv`.
    #[arg(long)]
    data: PathBuf,
    /// `class_id,seen|unseen` file fixing the partition of a CSV dataset.
    #[arg(long)]
    class_manifest: Option<PathBuf>,
}

/// Training settings shared by `train` and `ablate`.
#[derive(Debug, Args)]
struct TrainSettingArgs {
    /// Optional key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` entry; repeatable, applied after the other flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// MAHA or EUCLID.
    #[arg(long)]
    metric: Option<String>,
    /// A_AND_B or A_ONLY.
    #[arg(long)]
    branches: Option<String>,
    /// ATF or CONCAT.
    #[arg(long)]
    fusion: Option<String>,
    #[arg(long)]
    lambda_vae: Option<f64>,
    #[arg(long)]
    lambda_mse: Option<f64>,
    #[arg(long)]
    lambda_m: Option<f64>,
    #[arg(long)]
    ridge: Option<f64>,
    /// Latent width.
    #[arg(long)]
    latent: Option<usize>,
    /// Projection width.
    #[arg(long)]
    proj: Option<usize>,
    /// Backpropagate through the metric inverse instead of holding it fixed per batch.
    #[arg(long)]
    exact_metric: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    settings: TrainSettingArgs,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-epoch loss table (CSV).
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Write the `U,S,H` row here as well as to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional per-class accuracy table (CSV).
    #[arg(long)]
    per_class: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    settings: TrainSettingArgs,
    /// Comma-separated metric modes.
    #[arg(long)]
    metrics: Option<String>,
    /// Comma-separated branch settings.
    #[arg(long = "branch-set")]
    branch_set: Option<String>,
    /// Comma-separated fusion modes.
    #[arg(long)]
    fusions: Option<String>,
    /// `grid`, or comma-separated `vae:mse:m` weight triples.
    #[arg(long)]
    lambdas: Option<String>,
    /// Comma-separated `PROJxLATENT` width pairs.
    #[arg(long)]
    dims: Option<String>,
    /// Result table (CSV); standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset whose class semantics are the candidates.
    #[command(flatten)]
    data: DataArgs,
    /// CSV of visual feature rows; a non-numeric first line is read as a header.
    #[arg(long)]
    query: PathBuf,
    /// Prediction table (CSV); standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    path: PathBuf,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let argv = argv.into_iter().skip(1).collect();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a, argv),
        Command::Train(a) => commands::train(a, argv),
        Command::Eval(a) => commands::eval(a, argv),
        Command::Ablate(a) => commands::ablate(a, argv),
        Command::Classify(a) => commands::classify(a, argv),
        Command::Inspect(a) => commands::inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {f}", f.kind());
            ExitCode::from(f.exit_code())
        }
    }
}
