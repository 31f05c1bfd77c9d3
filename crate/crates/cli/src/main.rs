//! `pooledloss`: batch driver for the pool simulator and the loss
//! approximations.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pooledloss::pipeline::Scheme;

#[derive(Debug, Parser)]
#[command(
    name = "pooledloss",
    version,
    about = "Loss distributions of large default-intensity portfolios"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config's `seed` (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "POOLEDLOSS_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    FirstOrder,
    Scheme1,
    Scheme2,
    Gaussian,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::FirstOrder => Scheme::FirstOrder,
            SchemeArg::Scheme1 => Scheme::Scheme1,
            SchemeArg::Scheme2 => Scheme::Scheme2,
            SchemeArg::Gaussian => Scheme::Gaussian,
        }
    }
}

/// Run sizes; unset values fall back to the config, then to built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Sizes {
    /// Factor paths (or pool paths for `simulate`).
    #[arg(short = 'M', long)]
    pub paths: Option<usize>,
    /// Fluctuation samples per factor path.
    #[arg(short = 'J', long)]
    pub samples: Option<usize>,
    /// Fluctuation truncation level.
    #[arg(short = 'K', long)]
    pub trunc: Option<usize>,
    /// Evaluation time; must be a grid point (default: grid horizon).
    #[arg(long)]
    pub horizon: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo of the finite pool: per-path losses at the horizon.
    Simulate {
        #[command(flatten)]
        sizes: Sizes,
        /// Also write full loss trajectories of the first N paths.
        #[arg(long, default_value_t = 0)]
        trajectories: usize,
    },
    /// First- or second-order loss distribution on a lattice, with VaR.
    Approx {
        #[arg(long, value_enum, default_value = "scheme2")]
        scheme: SchemeArg,
        #[command(flatten)]
        sizes: Sizes,
        /// Scheme 1 only: choose M and J for this many seconds from a pilot run.
        #[arg(long)]
        auto_budget: Option<f64>,
        /// Pool paths for the finite-system VaR column (omitted when absent).
        #[arg(long)]
        finite_paths: Option<usize>,
        /// Dump LLN moments, one fluctuation path and `Var[v0]` for this factor path.
        #[arg(long)]
        dump_path: Option<u64>,
    },
    /// VaR table: first order, second order and the finite pool.
    Var {
        #[arg(long, value_enum, default_value = "scheme2")]
        scheme: SchemeArg,
        #[command(flatten)]
        sizes: Sizes,
        /// Pool paths for the finite-system column (default: config or 10000).
        #[arg(long)]
        finite_paths: Option<usize>,
        /// Confidence levels.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.95, 0.99])]
        levels: Vec<f64>,
    },
    /// Approximate loss paths at several times by bridge or direct sampling.
    Skeleton {
        #[command(flatten)]
        sizes: Sizes,
        /// Skeleton times (grid points); default: ten equally spaced.
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
        /// Sample by direct simulation instead of Gaussian bridging.
        #[arg(long)]
        direct: bool,
        /// Loss levels for the exceedance table.
        #[arg(long, value_delimiter = ',')]
        levels: Vec<f64>,
    },
    /// Standard errors of the pool simulator and the approximations at equal wall-clock.
    Compare {
        #[command(flatten)]
        sizes: Sizes,
        /// Seconds per estimator (default: config `compare.budget_seconds`).
        #[arg(long)]
        budget: Option<f64>,
        /// Call strike (default: config `compare.strike`).
        #[arg(long)]
        strike: Option<f64>,
    },
    /// Scheme-1 split of a time budget into factor paths and samples.
    Allocate {
        #[command(flatten)]
        sizes: Sizes,
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long)]
        strike: Option<f64>,
        #[arg(long, default_value_t = 50)]
        pilot_paths: usize,
        #[arg(long, default_value_t = 20)]
        pilot_samples: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
