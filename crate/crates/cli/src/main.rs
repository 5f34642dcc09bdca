//! `unitary`: train a baseline, capture its activations, project them onto
//! orthogonal weights, then train and evaluate the unitary network.
//!
//! Exit codes: 0 success, 1 replay mismatch, 2 config error, 3 data error,
//! 4 numeric divergence, 5 shape mismatch.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use unitary_core::Error;

pub const EXIT_MISMATCH: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_DIVERGED: u8 = 4;
pub const EXIT_SHAPE: u8 = 5;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    pub fn shape(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_SHAPE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidInput(_) => EXIT_CONFIG,
            Error::Parse { .. } | Error::Format { .. } | Error::Io { .. } => EXIT_DATA,
            Error::Degenerate { .. } | Error::Diverged { .. } | Error::Numeric(_) => EXIT_DIVERGED,
            Error::Shape(_) => EXIT_SHAPE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "unitary", version, about = "Orthogonal-weight projection pipeline for Fourier-domain MNIST networks")]
#[command(after_help = "Exit codes: 0 success, 1 replay mismatch, 2 config, 3 data, 4 numeric divergence, 5 shape mismatch.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML file whose keys override the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base settings: `desk` (10 layers, 16×16) or `full` (50 layers, 28×28).
    #[arg(long, default_value = "desk")]
    pub preset: String,
}

#[derive(Debug, Clone, Args)]
pub struct SeedArg {
    /// Master seed. Falls back to $UNITARY_SEED, then 0.
    #[arg(long, env = "UNITARY_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ForceArg {
    /// Overwrite existing outputs instead of leaving them untouched.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the unconstrained baseline network with cross-entropy.
    TrainBaseline {
        #[arg(long)]
        data_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        seed: SeedArg,
        /// Drop the per-sample unit-norm step (plain non-unitary comparator).
        #[arg(long)]
        no_normalize: bool,
        /// Also write per-epoch metrics CSV (plus norm sidecar) here.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        force: ForceArg,
    },
    /// Record per-layer (input, pre-tanh target) pairs for the first K training images.
    Capture {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        /// Sample count; defaults to `capture.samples` of the config.
        #[arg(long)]
        samples: Option<usize>,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        force: ForceArg,
    },
    /// Fit orthogonal weights to every layer and channel of a trace.
    Project {
        #[arg(long)]
        trace: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        seed: SeedArg,
        /// Concurrent fits.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        force: ForceArg,
    },
    /// Train the unitary network from Xavier or projected weights; logs
    /// zero-shot metrics as epoch -1.
    TrainUnitary {
        /// `xavier` or a projection file.
        #[arg(long)]
        init: String,
        /// Baseline state supplying the dense head for a projection init.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        data_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        seed: SeedArg,
        /// Several seeds, comma separated; overrides --seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Defaults to `unitary.epochs` of the config. Zero is allowed.
        #[arg(long)]
        epochs: Option<usize>,
        /// Defaults to `projection` or `xavier`.
        #[arg(long)]
        run_id: Option<String>,
        /// Final network state (single seed only).
        #[arg(long)]
        state_out: Option<PathBuf>,
        /// Metrics CSV; the norm profile goes to a `.norms.json` sidecar.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        force: ForceArg,
    },
    /// Evaluate a saved network state on the train and validation sets.
    Eval {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "eval")]
        run_id: String,
        /// Optional metrics CSV with a single epoch -1 row.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        force: ForceArg,
    },
    /// Emit figure data: per-layer norms, accuracy curves, and box statistics.
    ///
    /// Box statistics use exclusive-median quartiles: Q1 and Q3 are the
    /// medians of the values below and above the median (the median itself
    /// excluded for odd counts). For {1,2,3,4}: Q1 1.5, median 2.5, Q3 3.5.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        force: ForceArg,
    },
    /// Re-run a manifest into a scratch directory and compare output hashes.
    Replay {
        manifest: PathBuf,
    },
}

pub fn run(argv: Vec<String>) -> Result<(), Failure> {
    let cli = Cli::try_parse_from(std::iter::once("unitary".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| Failure::config(e.to_string()))?;
    commands::dispatch(cli.command, argv)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    // Let clap render help, version, and usage errors itself.
    if let Err(e) = Cli::try_parse_from(std::iter::once("unitary".to_string()).chain(argv.iter().cloned())) {
        e.exit();
    }
    match run(argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
