//! Command-line front end.
//!
//! Exit codes: 0 all checks pass, 1 an assertion failed, 2 configuration
//! error, 3 internal error.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{run_estimate, run_sweep, run_verify, Outcome};
pub use config::{Resolution, RunConfig};

use crate::error::LabError;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

/// Caps the worker pool when set.
pub const THREADS_ENV: &str = "HARDY_LAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "hardy-lab", version, about = "Weighted Hardy and Friedrichs inequalities on a rectangle with alternating boundary conditions")]
struct Cli {
    /// Print the default configuration as JSON and exit.
    #[arg(long)]
    print_default_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check every inequality on a generated corpus.
    Verify(RunArgs),
    /// Estimate sharp constants.
    Estimate(RunArgs),
    /// Estimate sharp constants over parameter axes.
    Sweep(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON configuration; defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report directory.
    #[arg(long, default_value = "reports")]
    out: PathBuf,
    /// Overrides the corpus seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replaces the configured resolutions, e.g. `--resolution 64x64`.
    #[arg(long = "resolution", value_name = "NXxNY")]
    resolutions: Vec<Resolution>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, LabError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.corpus.seed = seed;
        }
        if !self.resolutions.is_empty() {
            cfg.resolutions = self.resolutions.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn init_threads() -> Result<(), LabError> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| LabError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        // A second initialization in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    if cli.print_default_config {
        println!("{}", RunConfig::default().to_json());
        return EXIT_PASS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: a command is required (verify, estimate or sweep); see --help");
        return EXIT_CONFIG;
    };
    let result = init_threads().and_then(|()| match &command {
        Command::Verify(a) => a.config().and_then(|c| run_verify(&c, &a.out)),
        Command::Estimate(a) => a.config().and_then(|c| run_estimate(&c, &a.out)),
        Command::Sweep(a) => a.config().and_then(|c| run_sweep(&c, &a.out)),
    });
    match result {
        Ok(o) if o.failures == 0 => {
            eprintln!("{} rows, all checks pass", o.rows);
            EXIT_PASS
        }
        Ok(o) => {
            eprintln!("{} rows, {} failed", o.rows, o.failures);
            EXIT_FAIL
        }
        Err(e @ LabError::Config(_)) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("internal error: {e}");
            EXIT_INTERNAL
        }
    }
}
