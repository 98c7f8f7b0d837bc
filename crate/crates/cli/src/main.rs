//! `pcgnet`: prepare datasets, pretrain, fine-tune, evaluate, run the
//! per-site ablation and synthesize cohorts.

mod commands;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pcgnet_core::Error;

#[derive(Parser, Debug)]
#[command(name = "pcgnet", version, about = "Phonocardiogram screening pipeline")]
struct Cli {
    /// Worker threads for loading, preprocessing and scoring (0 = all cores).
    #[arg(long, global = true, env = "PCGNET_THREADS", default_value_t = 0)]
    threads: usize,

    /// More log output; repeat for trace level.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Only warnings and errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a native manifest from a dataset directory.
    Prepare(PrepareArgs),
    /// Train a model from scratch (the murmur pretraining stage).
    Pretrain(TrainArgs),
    /// Fine-tune from pretrained weights with a fresh head.
    Finetune(TrainArgs),
    /// Score a manifest and write report.csv, roc.csv and pr.csv.
    Evaluate(EvaluateArgs),
    /// Train one model per auscultation site plus a combined model.
    AblateSites(TrainArgs),
    /// Generate a synthetic labelled cohort.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Physionet2022,
    Native,
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Dataset directory.
    pub dataset_dir: PathBuf,
    #[arg(long, value_enum, default_value = "physionet2022")]
    pub format: Format,
    /// Output manifest CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Native manifest CSV.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set depth=6`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Pretrained weights whose trunk initializes the model.
    #[arg(long)]
    pub init_weights: Option<PathBuf>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Training shuffle seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LevelArg {
    Patient,
    Recording,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SiteArg {
    #[value(name = "AV")]
    Av,
    #[value(name = "MV")]
    Mv,
    #[value(name = "PV")]
    Pv,
    #[value(name = "TV")]
    Tv,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum QualityArg {
    Satisfactory,
    Unsatisfactory,
    All,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    /// Run configuration; defaults to `config.txt` next to the weights.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "patient")]
    pub level: LevelArg,
    #[arg(long, value_enum, default_value = "all", ignore_case = true)]
    pub site: SiteArg,
    #[arg(long, value_enum, default_value = "all")]
    pub quality: QualityArg,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory (WAVs under `wav/`, plus `manifest.csv`).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub patients: usize,
    /// Fraction of positive patients.
    #[arg(long, default_value_t = 0.63)]
    pub positive: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated sites recorded per patient.
    #[arg(long, default_value = "AV,MV,PV,TV")]
    pub sites: String,
    #[arg(long, default_value_t = 5.0)]
    pub duration_s: f64,
    #[arg(long, default_value_t = 4000)]
    pub sample_rate: u32,
    #[arg(long, default_value_t = 72.0)]
    pub heart_rate: f64,
    #[arg(long, default_value_t = 12.0)]
    pub heart_rate_jitter: f64,
    /// Murmur of positive patients: systolic or diastolic.
    #[arg(long, default_value = "systolic")]
    pub murmur: String,
    /// Murmur band as `LOW,HIGH` in Hz.
    #[arg(long, default_value = "150,400")]
    pub murmur_band: String,
    #[arg(long, default_value_t = 0.25)]
    pub murmur_amplitude: f64,
    /// Sites of a positive patient carrying the murmur: `all` or a count
    /// chosen at random per patient.
    #[arg(long, default_value = "all")]
    pub murmur_sites: String,
    #[arg(long, default_value_t = 20.0)]
    pub snr_db: f64,
    /// Chance that a recording is degraded and flagged unsatisfactory.
    #[arg(long, default_value_t = 0.0)]
    pub unsatisfactory_fraction: f64,
}

/// 2 for configuration, usage and input errors, 3 for incompatible
/// weights, 4 for an empty selection, 1 otherwise.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::FingerprintMismatch { .. } | Error::ShapeMismatch(_) => 3,
        Error::EmptyDataset | Error::EmptySite(_) | Error::EmptyGroup => 4,
        Error::NonDistribution(_) | Error::LengthMismatch(..) | Error::SingleClass => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match &cli.command {
        Command::Prepare(a) => commands::prepare(a),
        Command::Pretrain(a) => commands::train(a, false),
        Command::Finetune(a) => commands::train(a, true),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::AblateSites(a) => commands::ablate(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
