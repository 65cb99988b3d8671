mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use v2x_core::trainer::TrainError;

#[derive(Debug, Parser)]
#[command(name = "v2x-vlm", version, about = "Cooperative vision-language trajectory planning at desk scale")]
struct Cli {
    /// Output root for every artifact a command writes.
    #[arg(long, global = true, env = "V2XVLM_OUT", default_value = "out")]
    out: PathBuf,
    /// Single source of randomness for the command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene corpus.
    GenData {
        #[arg(long, default_value_t = 200)]
        n: usize,
    },
    /// Train the teacher on the training split.
    TrainTeacher {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Distill a student from a trained teacher.
    Distill {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Plan one scene with a trained model.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        no_refine: bool,
    },
    /// Run the two link endpoints for one scene and plan on the vehicle side.
    CoopDemo {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, value_enum, default_value_t = TransportKind::Channel)]
        transport: TransportKind,
        /// Loopback port for the TCP transport; 0 picks a free one.
        #[arg(long, default_value_t = 0)]
        port: u16,
        #[arg(long, default_value_t = 10_000)]
        deadline_ms: u64,
    },
    /// Bandwidth per downsampling factor, optionally with accuracy on held-out scenes.
    SweepBandwidth {
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 0.5, 0.2, 0.1])]
        scales: Vec<f64>,
        #[arg(long, requires = "data")]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a model under image and text perturbations.
    Robustness {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Train and score the five ablation variants per seed.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0, 1, 2])]
        seeds: Vec<u64>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Check analytic gradients against finite differences.
    VerifyGradients {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        /// Model parameters probed in the end-to-end check.
        #[arg(long, default_value_t = 50)]
        model_checks: usize,
        #[arg(long, default_value_t = 1e-4)]
        model_tol: f64,
    },
    /// Per-layer attention FLOP table.
    FlopsReport {
        #[arg(long, default_value_t = 16)]
        nv: u64,
        #[arg(long, default_value_t = 8)]
        nt: u64,
        #[arg(long, default_value_t = 64)]
        d: u64,
        #[arg(long, default_value_t = 4)]
        heads: u64,
        #[arg(long)]
        rank: Option<u64>,
        #[arg(long, value_enum, default_value_t = Reading::Literal)]
        reading: Reading,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TransportKind {
    Channel,
    Tcp,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Reading {
    Literal,
    PerProjection,
}

/// Training knobs. A config file is applied first, then these flags.
#[derive(Debug, Args)]
struct TrainFlags {
    /// `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    kd_temp: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Divergence(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Verification(_) => 3,
            CliError::Io(_) => 4,
            CliError::Divergence(_) => 5,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<v2x_core::Error> for CliError {
    fn from(e: v2x_core::Error) -> Self {
        use v2x_core::model::checkpoint::CheckpointError;
        use v2x_core::{Error, EvalError, LinkError};
        let msg = e.to_string();
        match e {
            Error::Io(_) | Error::Dataset(_) | Error::Checkpoint(CheckpointError::Io(_)) => CliError::Io(msg),
            Error::Train(TrainError::DivergenceDetected { .. }) => CliError::Divergence(msg),
            Error::Eval(EvalError::Train(TrainError::DivergenceDetected { .. })) => CliError::Divergence(msg),
            Error::Train(TrainError::InvalidConfig(_)) | Error::Flop(_) => CliError::Usage(msg),
            Error::Link(LinkError::InvalidScale(_)) => CliError::Usage(msg),
            _ => CliError::Runtime(msg),
        }
    }
}

macro_rules! lift {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                v2x_core::Error::from(e).into()
            }
        })*
    };
}

lift!(
    v2x_core::TrainError,
    v2x_core::EvalError,
    v2x_core::LinkError,
    v2x_core::DatasetError,
    v2x_core::CheckpointError,
    v2x_core::ModelError,
    v2x_core::LossError,
    v2x_core::FlopError
);

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
