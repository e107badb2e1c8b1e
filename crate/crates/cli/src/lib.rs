//! Pipeline commands behind the `inr4d` binary.
//!
//! Every command reads its inputs from the work directory, writes its outputs
//! into a subdirectory of it together with the resolved configuration, and
//! never modifies its inputs. Layout:
//!
//! ```text
//! phantom/     volume_a*.cvol, spec.txt
//! dataset/     manifest.txt, slices/
//! hidden/      ground_truth.txt (read by `evaluate` only)
//! surrogate/   signal.csv
//! model/       model.txt, train_log.csv, checkpoints/
//! recon/       state_*.cvol, timings.csv, *.pgm
//! baseline/    bin_*.cvol, gap_report.txt
//! eval/        inr.csv, sorting.csv, summary.txt
//! ablate/      ablation_<axis>.csv
//! ```

pub mod commands;
pub mod config;
pub mod model;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::RunConfig;

pub const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  internal error
  2  usage or configuration error (unknown key, bad value)
  3  missing or unreadable file
  4  geometry mismatch between model and requested grid
  5  malformed input file
  6  training diverged
  7  data error (tracking failure, degenerate signal, state out of range)

Errors are printed as one line: `error code=<n> kind=<kind>: <message>`.";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] inr4d::Error),
}

impl CliError {
    /// Exit code and kind tag.
    pub fn code(&self) -> (i32, &'static str) {
        use inr4d::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config(_) => (2, "config"),
            CliError::Io(_) => (3, "io"),
            CliError::Core(e) => match e {
                E::Config(_) | E::InvalidArchitecture(_) => (2, "config"),
                E::Io { .. } => (3, "io"),
                E::Geometry(_) => (4, "geometry"),
                E::Format { .. } => (5, "format"),
                E::NonFiniteLoss { .. } | E::Divergence { .. } => (6, "divergence"),
                E::TrackingFailure { .. }
                | E::DegenerateRange(_)
                | E::Extrapolation { .. }
                | E::StateOutOfRange(_)
                | E::InSequence { .. } => (7, "data"),
                E::Shape(_) | E::StaleTape(_) | E::EmptyBatch => (1, "internal"),
            },
        }
    }

    /// The single-line form printed on failure.
    pub fn line(&self) -> String {
        let (code, kind) = self.code();
        let msg = self.to_string().replace('\n', " ");
        format!("error code={code} kind={kind}: {msg}")
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "inr4d",
    version,
    about = "4D MRI reconstruction with jointly trained coordinate networks, on a synthetic breathing phantom",
    after_help = EXIT_CODES
)]
pub struct Cli {
    /// Global seed, overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory holding all artifacts.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    /// Extra `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, PartialEq, Subcommand)]
pub enum Command {
    /// Render phantom volumes at the configured amplitudes.
    Phantom {
        #[arg(long)]
        amplitudes: Option<String>,
    },
    /// Simulate the interleaved acquisition and split it.
    Acquire,
    /// Track the diaphragm on the navigators and write the signal.
    Surrogate,
    /// Train both networks.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Reconstruct volumes at arbitrary states.
    Reconstruct {
        #[arg(long)]
        states: Option<String>,
    },
    /// Amplitude-sorting baseline volumes.
    Baseline {
        #[arg(long)]
        bins: Option<String>,
    },
    /// Score the model and the baseline on the validation split.
    Evaluate,
    /// Retrain over one hyperparameter axis.
    Ablate {
        #[arg(long)]
        axis: Option<String>,
        #[arg(long)]
        values: Option<String>,
    },
}

impl Command {
    /// Subcommand flags as config overrides.
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut put = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        match self.clone() {
            Command::Phantom { amplitudes } => put("phantom_amplitudes", amplitudes),
            Command::Train { epochs } => put("epochs", epochs.map(|e| e.to_string())),
            Command::Reconstruct { states } => put("states", states),
            Command::Baseline { bins } => put("baseline_bins", bins),
            Command::Ablate { axis, values } => {
                put("ablate_axis", axis);
                put("ablate_values", values);
            }
            Command::Acquire | Command::Surrogate | Command::Evaluate => {}
        }
        out
    }
}

/// Config file, then `--set` pairs, then dedicated flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for pair in &cli.set {
        cfg.set_pair(pair)?;
    }
    if let Some(s) = cli.seed {
        cfg.set("seed", &s.to_string())?;
    }
    for (k, v) in cli.command.overrides() {
        cfg.set(k, &v)?;
    }
    Ok(cfg)
}

/// Runs one parsed invocation and returns the text to print.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = resolve_config(cli)?;
    cfg.validate()?;
    commands::dispatch(&cli.command, &cfg, &cli.workdir)
}

/// Entry point shared by the binary and tests: parses `args`, runs, prints,
/// and returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::Usage(first).line());
            return 2;
        }
    };
    match run(&cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("{}", e.line());
            e.code().0
        }
    }
}
