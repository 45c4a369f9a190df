//! Batch front end for `kipa-core`: analytic and Monte Carlo sweeps over pump
//! strength, chain calibration fits and figure data.
//!
//! Exit statuses: 0 success, 2 usage, 3 invalid configuration or input,
//! 4 unstable operating point, 5 fit failure, 6 I/O failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod table;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::commands::{Figure, RunOptions};
use crate::config::{Format, RunConfig};
use crate::error::{CliError, Result};

const DEFAULT_OUT_DIR: &str = "kipa-out";

#[derive(Debug, Parser)]
#[command(
    name = "kipa",
    version,
    about = "Model, emulate and analyse path-entangled microwave output of a two-port parametric amplifier",
    after_help = "Exit status: 0 success, 2 usage, 3 invalid configuration or input, \
                  4 unstable operating point (C >= 1), 5 fit failure, 6 I/O failure."
)]
pub struct Cli {
    /// TOML run configuration; relative paths inside it resolve against its directory.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Output directory [default: [output] dir, else ./kipa-out].
    #[arg(long, global = true, value_name = "DIR", env = "KIPA_OUT_DIR")]
    pub out: Option<PathBuf>,

    /// Master seed for sampling; overrides [sampler] seed.
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,

    /// Table format; repeat for several [default: [output] formats, else csv and json].
    #[arg(long = "format", global = true, value_enum, value_name = "FORMAT")]
    pub formats: Vec<Format>,

    /// Number of points for range sweeps; overrides [pump] points.
    #[arg(long, global = true, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    pub points: Option<u64>,

    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analytic sweep: optimal-angle variances, Duan parameter and log-negativity.
    Model,
    /// Monte Carlo emulation of the measurement chain with jackknife error bars.
    Sample,
    /// Fit chain gain and added noise to a noise-versus-temperature curve.
    Calibrate {
        /// Curve CSV (temperature_K, noise_density_V2_per_Hz); overrides [calibration] curve.
        #[arg(long, value_name = "PATH")]
        curve: Option<PathBuf>,
    },
    /// Figure data: squeezing (fig2) or log-negativity (fig3) versus pump power.
    Reproduce {
        #[arg(value_enum)]
        figure: Figure,
    },
}

fn load_config(path: Option<&Path>, required: bool) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None if required => Err(CliError::Usage("this command needs --config PATH".into())),
        None => RunConfig::parse("", Path::new("")),
    }
}

fn options(cli: &Cli, cfg: &RunConfig) -> RunOptions {
    let formats = if cli.formats.is_empty() {
        cfg.formats.clone()
    } else {
        let mut f = cli.formats.clone();
        f.dedup();
        f
    };
    RunOptions {
        out_dir: cli
            .out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
        seed: cli.seed,
        formats,
        points: cli.points.map(|p| p as usize),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let needs_config = !matches!(cli.command, Command::Calibrate { .. });
    let cfg = load_config(cli.config.as_deref(), needs_config)?;
    let opts = options(cli, &cfg);
    match &cli.command {
        Command::Model => commands::run_model(&cfg, &opts).map(drop),
        Command::Sample => commands::run_sample(&cfg, &opts).map(drop),
        Command::Calibrate { curve } => commands::run_calibrate(&cfg, curve.as_deref(), &opts).map(drop),
        Command::Reproduce { figure } => commands::run_reproduce(*figure, &cfg, &opts).map(drop),
    }
}
