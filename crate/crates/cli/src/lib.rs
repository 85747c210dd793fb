//! Batch front-end for `sf-sampler`: `sample`, `sweep`, `oracle-check`, and
//! `probe`, each driven by one TOML experiment file.
//!
//! Exit codes: `0` success, `2` invalid configuration or arguments, `3` the
//! run completed (outputs written) but failed its gate.

// `!(x > 0)` is how NaN is rejected alongside the range check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod config;
pub mod error;
pub mod provenance;

pub use commands::Overrides;
pub use config::{ExperimentConfig, SampleFormat};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "sf-sampler", version, about = "Schrodinger-Follmer diffusion sampler")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment file (TOML, or a provenance.json from an earlier run).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `run.output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores). Never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Sample file format; overrides `run.formats`.
    #[arg(long, global = true, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate one ensemble and write its terminal samples.
    Sample,
    /// Simulate every (n, epsilon) cell and write one metrics row per cell.
    Sweep,
    /// Compare Monte Carlo drift against quadrature and closed forms.
    OracleCheck,
    /// Estimate the Lipschitz and ratio constants of log phi.
    Probe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Bin,
    Both,
}

impl FormatArg {
    fn formats(self) -> Vec<SampleFormat> {
        match self {
            Self::Csv => vec![SampleFormat::Csv],
            Self::Bin => vec![SampleFormat::Bin],
            Self::Both => vec![SampleFormat::Csv, SampleFormat::Bin],
        }
    }
}

/// Runs a parsed command line; the caller turns the error into an exit code.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let Some(path) = &cli.config else {
        return Err(CliError::Config("--config <path> is required".into()));
    };
    let overrides = Overrides { out: cli.out.clone(), formats: cli.format.map(FormatArg::formats) };
    let cfg = commands::load_config(path, &overrides)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    pool.install(|| match cli.command {
        Command::Sample => commands::cmd_sample(&cfg),
        Command::Sweep => commands::cmd_sweep(&cfg),
        Command::OracleCheck => {
            let summary = commands::cmd_oracle_check(&cfg)?;
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
            Ok(())
        }
        Command::Probe => {
            let report = commands::cmd_probe(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(())
        }
    })
}

/// Parses `args`, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
