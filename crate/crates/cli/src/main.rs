//! Operator entry point: synthetic data generation, normalization
//! statistics, training, frame-level evaluation, and single-file scoring.

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "claws",
    version,
    about = "Weakly supervised anomaly scoring over per-segment video features"
)]
struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic weak-label dataset (feature files, train/test
    /// manifests, frame annotations).
    Synth(SynthArgs),
    /// Compute mean-normalization statistics over a training manifest.
    FitStats(FitStatsArgs),
    /// Train a model and write checkpoints plus a metrics log.
    Train(TrainArgs),
    /// Score a test manifest against frame annotations (pooled ROC/AUC).
    Eval(EvalArgs),
    /// Run one checkpoint over one feature file and print frame scores.
    Score(ScoreArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for the generated dataset.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 40)]
    train_normal: usize,
    #[arg(long, default_value_t = 40)]
    train_abnormal: usize,
    #[arg(long, default_value_t = 20)]
    test_normal: usize,
    #[arg(long, default_value_t = 20)]
    test_abnormal: usize,
    #[arg(long, default_value_t = 64)]
    segments_min: usize,
    #[arg(long, default_value_t = 192)]
    segments_max: usize,
    /// Feature dimension of the generated vectors (overrides config).
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long, default_value_t = 0.3)]
    anomaly_fraction: f64,
    #[arg(long, default_value_t = 3.0)]
    shift_magnitude: f64,
    /// Autocorrelation of consecutive segments' base features.
    #[arg(long, default_value_t = 0.99)]
    temporal_rho: f64,
    #[arg(long, env = "CLAWS_SEED", default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct FitStatsArgs {
    /// Training manifest CSV.
    #[arg(long)]
    manifest: PathBuf,
    /// Output statistics file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    feature_dim: Option<usize>,
    /// Also record per-dimension standard deviations for variance scaling.
    #[arg(long)]
    variance_scaling: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Training manifest CSV.
    #[arg(long)]
    manifest: PathBuf,
    /// Normalization statistics from fit-stats.
    #[arg(long)]
    stats: PathBuf,
    /// Output directory for checkpoints and logs.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    total_iters: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long, env = "CLAWS_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Toggle a component, e.g. --ablation nsm1=off --ablation loss-c=off.
    /// Keys: rbs, nsm1, nsm2, loss-ts-s, loss-c.
    #[arg(long = "ablation", value_parser = commands::parse_ablation)]
    ablations: Vec<commands::Ablation>,
}

#[derive(Args)]
struct EvalArgs {
    /// Test manifest CSV.
    #[arg(long)]
    manifest: PathBuf,
    /// Frame annotations CSV for the test split.
    #[arg(long)]
    annotations: PathBuf,
    /// Normalization statistics from fit-stats.
    #[arg(long)]
    stats: PathBuf,
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory for score and summary CSVs.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Also report the mean per-video AUC over videos with both classes.
    #[arg(long)]
    per_video: bool,
    /// Toggle a suppression module at inference, e.g. --ablation nsm1=off.
    #[arg(long = "ablation", value_parser = commands::parse_ablation)]
    ablations: Vec<commands::Ablation>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Checkpoint to score with.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Normalization statistics from fit-stats.
    #[arg(long)]
    stats: PathBuf,
    /// Feature file of one video.
    #[arg(long)]
    features: PathBuf,
    /// Frame count of the video; defaults to segments x frames-per-segment.
    #[arg(long)]
    num_frames: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long = "ablation", value_parser = commands::parse_ablation)]
    ablations: Vec<commands::Ablation>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let file_config = config::load_file_config(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(args) => commands::synth(&file_config, &args),
        Command::FitStats(args) => commands::fit_stats(&file_config, &args),
        Command::Train(args) => commands::train(&file_config, &args),
        Command::Eval(args) => commands::eval(&file_config, &args),
        Command::Score(args) => commands::score(&file_config, &args),
    }
}
