//! Argument parsing and config resolution.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// Environment variable holding the worker-thread count.
pub const THREADS_ENV: &str = "SCTC_THREADS";

#[derive(Debug, Parser)]
#[command(name = "sctc", version, about = "Spatial causal tensor completion")]
pub struct Cli {
    /// Log progress (-v) or solver detail (-vv) to stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory with known ground truth.
    Simulate(Common),
    /// Fit the three-step model; write the model JSON and fit report.
    Fit(WithData),
    /// Estimate effects; write the effect tables and overlap diagnostics.
    Estimate(WithData),
    /// Compare estimators over replicated synthetic scenarios.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// Override benchmark.replications.
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Sweep the number of eigenvectors and write effect-vs-k curves.
    Diagnose {
        #[command(flatten)]
        data: WithData,
        /// Override diagnose.k_grid, e.g. `0,5,10,20`.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
    },
    /// Print the default configuration as TOML.
    DefaultConfig,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config file; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if needed).
    #[arg(long)]
    pub out: PathBuf,
    /// Override the pipeline and scenario seeds.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct WithData {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory; overrides data.dir.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

fn resolve(common: &Common, data: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(d) = data {
        cfg.data.dir = Some(d.to_path_buf());
    }
    if let Some(d) = &cfg.data.dir {
        cfg.data.dir = Some(std::fs::canonicalize(d).map_err(|e| CliError::io(d, e))?);
    }
    Ok(cfg)
}

/// Execute a parsed command.
pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(c) => commands::cmd_simulate(&resolve(c, None)?, &c.out),
        Command::Fit(d) => commands::cmd_fit(&resolve(&d.common, d.data.as_deref())?, &d.common.out).map(drop),
        Command::Estimate(d) => {
            commands::cmd_estimate(&resolve(&d.common, d.data.as_deref())?, &d.common.out).map(drop)
        }
        Command::Benchmark { common, replications } => {
            let mut cfg = resolve(common, None)?;
            if let Some(r) = replications {
                cfg.benchmark.replications = *r;
            }
            commands::cmd_benchmark(&cfg, &common.out).map(drop)
        }
        Command::Diagnose { data, k } => {
            let mut cfg = resolve(&data.common, data.data.as_deref())?;
            if let Some(k) = k {
                cfg.diagnose.k_grid = k.clone();
            }
            commands::cmd_diagnose(&cfg, &data.common.out).map(drop)
        }
        Command::DefaultConfig => {
            print!("{}", RunConfig::default().to_toml()?);
            Ok(())
        }
    }
}
