//! `spillover`: estimation, effects, Monte Carlo and policy sweeps for
//! binary games on networks with heterogeneous outcome effects.

mod commands;
mod config;
mod data;
mod output;
mod settings;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// A required input file does not exist.
#[derive(Debug)]
pub struct MissingFile(pub PathBuf);

impl fmt::Display for MissingFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "required file not found: {}", self.0.display())
    }
}

impl std::error::Error for MissingFile {}

#[derive(Debug, Parser)]
#[command(name = "spillover", version, about = "Treatment effects with spillovers through an equilibrium take-up game")]
pub struct Cli {
    /// TOML run configuration; command-line flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the take-up game and the outcome equations.
    Estimate(EstimateArgs),
    /// Monte Carlo study of the two-step estimator.
    Mc(McArgs),
    /// Predicted mean outcome under means-tested assignment rules.
    Predict(PredictArgs),
    /// Potential-outcome, direct and spillover effect curves.
    Effects(EffectsArgs),
    /// Draw a synthetic dataset and write it as input files.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Undirected edge list `i,j` (0-based).
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Agent coordinates `id,x,y`; links agents within `--radius`.
    #[arg(long)]
    pub coords: Option<PathBuf>,
    #[arg(long)]
    pub radius: Option<f64>,
    /// Covariates `id,name...`; an intercept `const` is added unless present.
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    #[arg(long)]
    pub assignment: Option<PathBuf>,
    #[arg(long)]
    pub choice: Option<PathBuf>,
    #[arg(long)]
    pub outcome: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Control-function order.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub cf_order: Option<u8>,
    /// Estimate even where the equilibrium need not be unique.
    #[arg(long)]
    pub allow_nonunique: bool,
    /// Small-sample scaling of the heteroskedasticity term.
    #[arg(long)]
    pub dof_adjust: bool,
    #[arg(long)]
    pub solver_tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub max_newton: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Stop after the first stage.
    #[arg(long, conflicts_with = "second_stage")]
    pub first_stage: bool,
    /// Run only the second stage at the first-stage estimate stored in `--fit`.
    #[arg(long, requires = "fit")]
    pub second_stage: bool,
    /// Directory of a previous `estimate` run.
    #[arg(long)]
    pub fit: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Data-generating process (TOML with the keys of the `[dgp]` section).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// 3000 replications unless `--reps` is given.
    #[arg(long)]
    pub paper_scale: bool,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Single rule such as `wealth<=1.5`.
    #[arg(long)]
    pub rule: Option<String>,
    /// Sweep the threshold over the covariate's 5% quantiles.
    #[arg(long)]
    pub sweep: bool,
    /// Covariate for `--sweep` and `--taus`.
    #[arg(long)]
    pub covariate: Option<String>,
    /// Explicit thresholds.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub taus: Option<Vec<f64>>,
    /// Arm means without the control-function terms.
    #[arg(long)]
    pub paper_literal: bool,
}

#[derive(Debug, Args)]
pub struct EffectsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Spacing of the neighborhood-score grid on [0, 1].
    #[arg(long)]
    pub grid_step: Option<f64>,
    /// Reference score for spillover effects.
    #[arg(long)]
    pub pi_base: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Which replication's draw to write.
    #[arg(long, default_value_t = 0)]
    pub rep: u64,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<MissingFile>().is_some() {
            return 2;
        }
        if let Some(spillover::Error::Io { source, .. }) = cause.downcast_ref::<spillover::Error>() {
            if source.kind() == std::io::ErrorKind::NotFound {
                return 2;
            }
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
