mod dgp;
mod effects;
mod estimate;
mod fitdir;
mod mc;
mod predict;
mod simulate;

use std::path::PathBuf;

use anyhow::Result;

use crate::config::{self, ConfigFile};
use crate::{Cli, Command};

/// Settings every command shares.
pub struct Context {
    pub file: ConfigFile,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => config::load(path)?,
        None => ConfigFile::default(),
    };
    let out = cli
        .out
        .clone()
        .or_else(|| file.run.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let seed = cli.seed.or(file.run.seed);
    let ctx = Context { file, out, seed };
    match &cli.command {
        Command::Estimate(a) => estimate::run(&ctx, a),
        Command::Mc(a) => mc::run(&ctx, a),
        Command::Predict(a) => predict::run(&ctx, a),
        Command::Effects(a) => effects::run(&ctx, a),
        Command::Simulate(a) => simulate::run(&ctx, a),
    }
}
