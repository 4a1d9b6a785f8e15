//! Command-line front end: `solve`, `verify`, `convergence` and `barriers`.
//!
//! Exit codes: 0 success, 1 configuration or hypothesis error, 2 solver
//! failure, 3 verification failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use spacelike_core::{Error, SolveError};

mod commands;
pub mod config;
pub mod output;

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "spacelike",
    version,
    about = "Curvature equations for spacelike graphs in Minkowski space"
)]
pub struct Cli {
    /// Worker threads for assembly (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory (default: `<config stem>-out` next to the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Ignore and do not populate the result cache.
    #[arg(long, global = true)]
    pub no_cache: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run supersolution, subsolution and main solve; write CSV fields and report.json.
    Solve { config: PathBuf },
    /// Check a solution against the a priori estimates.
    Verify { solution: PathBuf, config: PathBuf },
    /// Solve on each `h_list` entry and report errors against `reference`.
    Convergence { config: PathBuf },
    /// Build and check the boundary barriers.
    Barriers { config: PathBuf },
}

/// An error with its exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub const CONFIG: u8 = 1;
    pub const SOLVER: u8 = 2;
    pub const VERIFY: u8 = 3;

    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: Self::CONFIG,
            message: message.into(),
        }
    }

    pub fn solver(message: impl Into<String>) -> Self {
        Self {
            code: Self::SOLVER,
            message: message.into(),
        }
    }

    pub fn verify(message: impl Into<String>) -> Self {
        Self {
            code: Self::VERIFY,
            message: message.into(),
        }
    }

    pub fn from_core(e: Error) -> Self {
        Self::config(e.to_string())
    }

    pub fn from_solve(e: SolveError) -> Self {
        match e {
            SolveError::Core(_) | SolveError::Hypothesis(_) => Self::config(e.to_string()),
            other => Self::solver(other.to_string()),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::config(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn out_dir(cli_out: &Option<PathBuf>, cfg: &RunConfig, config_path: &Path) -> PathBuf {
    if let Some(o) = cli_out.clone().or_else(|| cfg.output.clone()) {
        return o;
    }
    let stem = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    config_path
        .parent()
        .unwrap_or(Path::new("."))
        .join(format!("{stem}-out"))
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> u8 {
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return Failure::CONFIG;
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let result = match &cli.command {
        Command::Solve { config } => RunConfig::load(config).and_then(|cfg| {
            let out = out_dir(&cli.out, &cfg, config);
            commands::solve(&cfg, &out, !cli.no_cache && cfg.cache)
        }),
        Command::Verify { solution, config } => RunConfig::load(config).and_then(|cfg| {
            let out = cli.out.clone();
            commands::verify(&cfg, solution, out.as_deref())
        }),
        Command::Convergence { config } => RunConfig::load(config).and_then(|cfg| {
            let out = out_dir(&cli.out, &cfg, config);
            commands::convergence(&cfg, &out)
        }),
        Command::Barriers { config } => RunConfig::load(config).and_then(|cfg| {
            let out = cli.out.clone();
            commands::barriers(&cfg, out.as_deref())
        }),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.code
        }
    }
}
