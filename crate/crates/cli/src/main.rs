//! `tta-seg`: pretrain on a labeled source domain, adapt to an unlabeled
//! target test set at test time, evaluate and run ablations.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;
mod config;
mod rundir;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// A command failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Self {
            code: 2,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn runtime(msg: impl fmt::Display) -> Self {
        Self {
            code: 1,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn code(&self) -> u8 {
        self.code
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<tta_seg::Error> for Failure {
    fn from(e: tta_seg::Error) -> Self {
        use tta_seg::Error as E;
        let code = match e {
            E::Shape(_) | E::Load { .. } | E::Param(_) | E::Config(_) | E::Checkpoint(_) | E::Precondition(_) => 2,
            E::NonFinite { .. } | E::Io(_) | E::Json(_) | E::Image(_) => 1,
        };
        Self {
            code,
            error: e.into(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self {
            code: 1,
            error: e.into(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "tta-seg", version, about = "Multi-task consistency test-time adaptation for optic disc/cup segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labeled dataset.
    Synth(SynthArgs),
    /// Train a source model on a labeled dataset.
    Pretrain(PretrainArgs),
    /// Write the frozen source-model pseudo labels of a test set.
    PseudoLabel(PseudoLabelArgs),
    /// Adapt a source checkpoint to an unlabeled test set.
    Adapt(AdaptArgs),
    /// Score a checkpoint (optionally against a baseline) on a labeled set.
    Evaluate(EvaluateArgs),
    /// Run the loss ablation and the weight sweeps.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root for default run directories [env: TTA_SEG_OUTPUT_ROOT; default: runs].
    #[arg(long)]
    output_root: Option<PathBuf>,
    /// Exact run directory (default: <output-root>/<command>).
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// If the run directory exists, write a numbered sibling instead of failing.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Synthetic preset name or dataset directory.
    #[arg(long)]
    dataset: Option<String>,
    /// Generation seed for a synthetic preset.
    #[arg(long)]
    data_seed: Option<u64>,
    /// Number of images to generate for a synthetic preset.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value = "synthetic-source")]
    preset: String,
    #[arg(long, default_value_t = 32)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset directory (`images/`, `masks/`).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Training seed (weight init, shuffling, augmentation).
    #[arg(long)]
    seed: Option<u64>,
    /// Total epochs, split 5:1 between the cross-entropy and Dice boundary phases.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args, Debug)]
struct PseudoLabelArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Source checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args, Debug)]
struct AdaptationArgs {
    /// Weight of the boundary-consistency loss.
    #[arg(long)]
    alpha: Option<f64>,
    /// Weight of the feature-consistency loss.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Passes over the test set.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Pseudo-label loss with the positive cross-entropy term only.
    #[arg(long)]
    tseg_positive_only: bool,
    /// Supervise with soft source probabilities instead of hard pseudo labels.
    #[arg(long)]
    soft_pseudo_labels: bool,
}

#[derive(Args, Debug)]
struct AdaptArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    adaptation: AdaptationArgs,
    /// Source checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Unadapted checkpoint to compare against.
    #[arg(long)]
    baseline: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SweepChoice {
    Alpha,
    Beta,
    Both,
    None,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    adaptation: AdaptationArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Weight sweeps to run (default: from the config, both).
    #[arg(long, value_enum)]
    sweep: Option<SweepChoice>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::PseudoLabel(a) => commands::pseudo_label(a),
        Command::Adapt(a) => commands::adapt(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
