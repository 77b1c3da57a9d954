use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use serde::Serialize;

use spillover::simulate::{draw_assignment, run_monte_carlo, state_rng, synthetic_state};
use spillover::{McConfig, McResult, PublicState};

use super::dgp::{load_spec, DgpSettings};
use super::Context;
use crate::config::pick;
use crate::data::{self, DataSettings, Needs};
use crate::output::{ensure_dir, numeric_rows, write_json, write_manifest, write_table};
use crate::settings::ModelSettings;
use crate::McArgs;

const DEFAULT_REPS: usize = 500;
const PAPER_REPS: usize = 3000;

#[derive(Debug, Serialize)]
struct Settings {
    data: Option<DataSettings>,
    model: ModelSettings,
    dgp: DgpSettings,
    spec: Option<PathBuf>,
    reps: usize,
    threads: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Summary {
    n: usize,
    mean_degree: f64,
    reps: usize,
    successes: usize,
    failures: usize,
    mean_take_up: f64,
    lambda_bound_hits: usize,
    mean_newton_iterations: f64,
    /// Smallest eigenvalue of corrected minus naive covariance over all replications and arms.
    min_psd_gap: f64,
    state_fingerprint: String,
}

/// The fixed public state: from input files when a network is given, otherwise synthetic.
fn public_state(settings: &Settings) -> Result<PublicState> {
    let dgp = &settings.dgp;
    match &settings.data {
        Some(data_settings) => {
            let loaded = data::load(data_settings, Needs::default())?;
            if data_settings.assignment.is_some() {
                Ok(loaded.state)
            } else {
                let mut rng = state_rng(dgp.seed);
                let z = draw_assignment(&mut rng, loaded.state.n(), dgp.assign_prob);
                Ok(loaded.state.with_assignment(z)?)
            }
        }
        None => Ok(synthetic_state(&dgp.design(), dgp.seed)?.state),
    }
}

pub fn run(ctx: &Context, args: &McArgs) -> Result<()> {
    let spec_file = args.spec.as_deref().map(load_spec).transpose()?;
    let data_settings = DataSettings::resolve(&args.data, &ctx.file);
    let default_reps = if args.paper_scale { PAPER_REPS } else { DEFAULT_REPS };
    let settings = Settings {
        data: data_settings.has_network().then_some(data_settings),
        model: ModelSettings::resolve(&args.model, &ctx.file)?,
        dgp: DgpSettings::resolve(spec_file.as_ref(), &ctx.file.dgp, ctx.seed)?,
        spec: args.spec.clone(),
        reps: pick(args.reps, &ctx.file.run.reps).unwrap_or(default_reps),
        threads: pick(args.threads, &ctx.file.run.threads),
    };
    if settings.model.cf_order != 1 {
        bail!("the Monte Carlo design has a linear control function; use --cf-order 1");
    }
    let s = public_state(&settings)?;
    let cfg = McConfig {
        first_stage: settings.model.first_stage(),
        second_stage: settings.model.second_stage(),
        threads: settings.threads,
    };
    let result = run_monte_carlo(&s, &settings.dgp.dgp(), settings.reps, &cfg)?;

    ensure_dir(&ctx.out)?;
    write_outputs(&ctx.out, &s, &result)?;
    let mut inputs: Vec<&Path> = settings.data.as_ref().map(DataSettings::paths).unwrap_or_default();
    if let Some(p) = &settings.spec {
        inputs.push(p);
    }
    write_manifest(
        &ctx.out,
        "mc",
        Some(settings.dgp.seed),
        &settings,
        &inputs,
        &["mc_table.csv", "comparators.csv", "mc_failures.csv", "mc_summary.json"],
    )?;
    Ok(())
}

fn write_outputs(out: &Path, s: &PublicState, r: &McResult) -> Result<()> {
    let rows = r.rows.iter().map(|m| {
        (
            vec![m.name.clone()],
            vec![m.truth, m.mean_estimate, m.bias, m.mean_se, m.empirical_sd, m.coverage, m.mc_se],
        )
    });
    write_table(
        &out.join("mc_table.csv"),
        &["name", "truth", "mean_estimate", "bias", "mean_se", "empirical_sd", "coverage", "mc_se"],
        numeric_rows(rows),
    )?;

    let rows = r.comparators.iter().map(|c| {
        (
            vec![c.name.clone()],
            vec![
                c.truth,
                c.control_function_mean,
                c.ols_mean,
                c.iv_mean,
                c.control_function_mc_se,
                c.ols_mc_se,
                c.iv_mc_se,
            ],
        )
    });
    write_table(
        &out.join("comparators.csv"),
        &[
            "name",
            "truth",
            "control_function",
            "ols",
            "iv",
            "control_function_mc_se",
            "ols_mc_se",
            "iv_mc_se",
        ],
        numeric_rows(rows),
    )?;

    let failures = r.failures.iter().map(|(rep, msg)| vec![rep.to_string(), msg.clone()]).collect();
    write_table(&out.join("mc_failures.csv"), &["rep", "message"], failures)?;

    let m = r.replications.len().max(1) as f64;
    let summary = Summary {
        n: s.n(),
        mean_degree: s.network().mean_degree(),
        reps: r.reps,
        successes: r.successes(),
        failures: r.failures.len(),
        mean_take_up: r.mean_take_up,
        lambda_bound_hits: r.replications.iter().filter(|x| x.lambda_bound_hit).count(),
        mean_newton_iterations: r.replications.iter().map(|x| x.newton_iters as f64).sum::<f64>() / m,
        min_psd_gap: r
            .replications
            .iter()
            .map(|x| x.psd_gap.0.min(x.psd_gap.1))
            .fold(f64::INFINITY, f64::min),
        state_fingerprint: format!("{:016x}", r.state_fingerprint),
    };
    write_json(&out.join("mc_summary.json"), &summary)?;
    Ok(())
}
