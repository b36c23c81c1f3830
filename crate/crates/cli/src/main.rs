//! `mrbm`: train, sample, reconstruct, evaluate and self-check multinary RBM
//! stacks.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Manifest, RunConfig};
use mrbm::{Error, Violation};

#[derive(Parser)]
#[command(name = "mrbm", version, about = "Multinary RBM stacks: train, sample, reconstruct, evaluate, verify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a stack and write model.drbm, loss.csv, timing.csv, manifest.json.
    Train(RunConfig),
    /// Sample images from a checkpoint.
    Generate(RunConfig),
    /// Write original/reconstruction image pairs.
    Reconstruct(RunConfig),
    /// Exact log-likelihood for tiny binary models, otherwise a linear probe.
    Eval(RunConfig),
    /// Run the oracle and property checks and print a table.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Length of the Gibbs convergence chain.
        #[arg(long, default_value_t = 1_000_000)]
        gibbs_steps: usize,
    },
    /// Repeat the run recorded in a manifest.
    Replay {
        manifest: PathBuf,
        /// Write outputs here instead of the recorded directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io { path: PathBuf, source: std::io::Error },
    Lib(Error),
    ChecksFailed(usize),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        fn lib(e: &Error) -> u8 {
            match e {
                Error::Data(_) | Error::Shape(_) => 2,
                Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } => 3,
                Error::Invalid(v) if v.iter().any(|v| matches!(v, Violation::NonFinite { .. })) => 3,
                Error::Layer { source, .. } => lib(source),
                _ => 1,
            }
        }
        match self {
            CliError::Usage(_) => 1,
            CliError::Io { .. } => 2,
            CliError::Lib(e) => lib(e),
            CliError::ChecksFailed(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::ChecksFailed(n) => write!(f, "{n} check(s) failed"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

fn dispatch(command: &str, config: &RunConfig) -> Result<(), CliError> {
    match command {
        "train" => commands::train(config),
        "generate" => commands::generate(config),
        "reconstruct" => commands::reconstruct(config),
        "eval" => commands::eval(config),
        other => Err(CliError::Usage(format!("manifest records unknown command `{other}`"))),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(c) => dispatch("train", &c),
        Command::Generate(c) => dispatch("generate", &c),
        Command::Reconstruct(c) => dispatch("reconstruct", &c),
        Command::Eval(c) => dispatch("eval", &c),
        Command::Verify { seed, gibbs_steps } => commands::verify(seed, gibbs_steps),
        Command::Replay { manifest, out } => {
            let m = Manifest::read(&manifest)?;
            let mut config = m.config;
            if let Some(out) = out {
                config.out = out;
            }
            dispatch(&m.command, &config)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
