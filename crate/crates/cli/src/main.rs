mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lsd_core::dataio::{ConfigOverrides, ConvergenceFallback, LayerPolicy};
use lsd_core::Error;

#[derive(Debug, Parser)]
#[command(
    name = "lsd",
    version,
    about = "Layer-wise semantic dynamics: trajectory geometry for hallucination detection"
)]
struct Cli {
    /// Worker threads for per-sample work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Run directory name under the output root (default: UTC timestamp).
    #[arg(long, global = true)]
    run_id: Option<String>,

    /// Root directory for run outputs.
    #[arg(long, global = true, env = "LSD_OUT_ROOT", default_value = "runs")]
    out_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic trace bundle, or text pairs for the extractor.
    Synth(SynthArgs),
    /// Train the projection heads on a labelled bundle.
    Train(TrainArgs),
    /// Compute trajectory metrics and statistical tests.
    Analyze(AnalyzeArgs),
    /// Fit and evaluate detectors on trajectory metrics.
    Detect(DetectArgs),
    /// Score samples with trained projection and detector.
    Score(ScoreArgs),
    /// Check a trace bundle against every format invariant.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory (bundle, or JSONL files with --text-pairs).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit text pairs and extractor input instead of a bundle.
    #[arg(long)]
    text_pairs: bool,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    truth_dim: Option<usize>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    convergence_rate: Option<f64>,
    #[arg(long)]
    drift_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    FinalLayer,
    AllLayers,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FallbackArg {
    Argmax,
    Threshold,
}

#[derive(Debug, Args, Default)]
struct ConfigArgs {
    /// JSON run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    shared_dim: Option<usize>,
    #[arg(long)]
    hidden_mlp_dim: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    lr_floor: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    grad_clip_norm: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long, value_enum)]
    layer_policy: Option<PolicyArg>,
    #[arg(long)]
    paired_truth: bool,
    #[arg(long)]
    convergence_fraction: Option<f64>,
    #[arg(long, value_enum)]
    convergence_fallback: Option<FallbackArg>,
}

impl ConfigArgs {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            shared_dim: self.shared_dim,
            hidden_mlp_dim: self.hidden_mlp_dim,
            margin: self.margin,
            learning_rate: self.learning_rate,
            lr_floor: self.lr_floor,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            dropout: self.dropout,
            grad_clip_norm: self.grad_clip_norm,
            seed: self.seed,
            train_fraction: self.train_fraction,
            layer_policy: self.layer_policy.map(|p| match p {
                PolicyArg::FinalLayer => LayerPolicy::FinalLayer,
                PolicyArg::AllLayers => LayerPolicy::AllLayers,
            }),
            paired_truth: self.paired_truth.then_some(true),
            convergence_fraction: self.convergence_fraction,
            convergence_fallback: self.convergence_fallback.map(|f| match f {
                FallbackArg::Argmax => ConvergenceFallback::Argmax,
                FallbackArg::Threshold => ConvergenceFallback::Threshold,
            }),
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Projection output directory (default: <run>/projection).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Welch,
    Pooled,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    projection: PathBuf,
    /// Output directory (default: <run>/analysis).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "welch")]
    mode: ModeArg,
    #[arg(long)]
    convergence_fraction: Option<f64>,
    #[arg(long, value_enum)]
    convergence_fallback: Option<FallbackArg>,
}

#[derive(Debug, Args)]
struct DetectArgs {
    /// Analysis directory or metrics.csv produced by `analyze`.
    #[arg(long, required_unless_present_all = ["bundle", "projection"])]
    metrics: Option<PathBuf>,
    #[arg(long, requires = "projection", conflicts_with = "metrics")]
    bundle: Option<PathBuf>,
    #[arg(long, requires = "bundle")]
    projection: Option<PathBuf>,
    /// Output directory (default: <run>/detection).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Only run clustering; no supervised scores are reported.
    #[arg(long)]
    unsupervised: bool,
    /// Pick the F1-maximizing threshold on the training split.
    #[arg(long)]
    tune_threshold: bool,
    /// Append the per-layer alignment profile to the features.
    #[arg(long)]
    per_layer: bool,
    #[arg(long, default_value_t = lsd_core::detect::DEFAULT_L2)]
    l2: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    projection: PathBuf,
    /// Detector file (`model.json` from `detect`).
    #[arg(long)]
    model: PathBuf,
    /// Output file (default: <run>/scores.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    bundle: PathBuf,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } => 2,
        Error::ArtifactMismatch(_) => 4,
        Error::Io { .. }
        | Error::Json { .. }
        | Error::Csv(_)
        | Error::Format { .. }
        | Error::Version { .. }
        | Error::Data { .. }
        | Error::InsufficientData(_)
        | Error::Training(_)
        | Error::UndefinedAuroc(_)
        | Error::DegenerateGroups => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(&cli, a),
        Command::Train(a) => commands::train(&cli, a),
        Command::Analyze(a) => commands::analyze(&cli, a),
        Command::Detect(a) => commands::detect(&cli, a),
        Command::Score(a) => commands::score(&cli, a),
        Command::Validate(a) => commands::validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
