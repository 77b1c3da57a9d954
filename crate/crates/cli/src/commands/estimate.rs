use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Serialize;

use spillover::firststage::evaluate_first_stage;
use spillover::io::fmt_num;
use spillover::{estimate_second_stage, fit_first_stage, FirstStageFit, SecondStageFit};

use super::fitdir::{self, GAMMA_FILE, GAMMA_VCOV_FILE, THETA_FILE};
use super::Context;
use crate::data::{self, DataSettings, Loaded, Needs};
use crate::output::{ensure_dir, numeric_rows, p_value, write_json, write_manifest, write_table};
use crate::settings::ModelSettings;
use crate::EstimateArgs;

#[derive(Debug, Serialize)]
struct Settings {
    data: DataSettings,
    model: ModelSettings,
    stages: &'static str,
    fit: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct FirstStageSummary {
    n: usize,
    dropped_isolated: Vec<usize>,
    iterations: usize,
    converged: bool,
    loglik: f64,
    lambda_hat: f64,
    lambda_bound_hit: bool,
    equilibrium_iterations: usize,
    mean_sigma: f64,
    mean_pi: f64,
}

#[derive(Debug, Serialize)]
struct SecondStageSummary {
    cf_order: usize,
    n_treated: usize,
    n_untreated: usize,
    clamp_events: usize,
    mean_fitted_outcome: f64,
}

pub fn run(ctx: &Context, args: &EstimateArgs) -> Result<()> {
    let stages = if args.first_stage {
        "first"
    } else if args.second_stage {
        "second"
    } else {
        "both"
    };
    let settings = Settings {
        data: DataSettings::resolve(&args.data, &ctx.file),
        model: ModelSettings::resolve(&args.model, &ctx.file)?,
        stages,
        fit: if args.second_stage {
            Some(fitdir::resolve(&args.fit, &ctx.file.data.fit)?)
        } else {
            None
        },
    };
    let loaded = data::load(
        &settings.data,
        Needs {
            assignment: true,
            choice: true,
            outcome: !args.first_stage,
        },
    )?;
    let s = &loaded.state;
    let d = loaded.d.as_deref().expect("choice is required");
    let fs_cfg = settings.model.first_stage();

    let mut inputs: Vec<&Path> = settings.data.paths();
    let theta_path = settings.fit.as_ref().map(|dir| dir.join(THETA_FILE));
    let first = match &settings.fit {
        Some(dir) => {
            let theta = fitdir::read_theta(dir, s)?;
            evaluate_first_stage(s, d, &theta, &fs_cfg)?
        }
        None => fit_first_stage(s, d, &fs_cfg)?,
    };
    if let Some(p) = &theta_path {
        inputs.push(p);
    }

    ensure_dir(&ctx.out)?;
    let mut outputs = vec!["equilibrium.csv", "first_stage.json"];
    write_equilibrium(&ctx.out.join("equilibrium.csv"), &loaded, &first)?;
    write_json(&ctx.out.join("first_stage.json"), &first_summary(&loaded, &first))?;
    if settings.fit.is_none() {
        write_theta(&ctx.out.join(THETA_FILE), s.covariate_names(), &first)?;
        outputs.insert(0, THETA_FILE);
    }

    if !args.first_stage {
        let y = loaded.y.as_deref().expect("outcome is required");
        let second = estimate_second_stage(s, d, y, &first, &settings.model.second_stage())?;
        write_gammas(&ctx.out, s.covariate_names(), &second)?;
        write_fitted(&ctx.out.join("fitted.csv"), &loaded, &second)?;
        let n_treated = d.iter().filter(|&&x| x).count();
        write_json(
            &ctx.out.join("second_stage.json"),
            &SecondStageSummary {
                cf_order: settings.model.cf_order,
                n_treated,
                n_untreated: d.len() - n_treated,
                clamp_events: second.clamp_events,
                mean_fitted_outcome: second.mean_fitted(),
            },
        )?;
        outputs.extend([GAMMA_FILE, GAMMA_VCOV_FILE, "fitted.csv", "second_stage.json"]);
    }
    write_manifest(&ctx.out, "estimate", ctx.seed, &settings, &inputs, &outputs)?;
    Ok(())
}

fn first_summary(loaded: &Loaded, fit: &FirstStageFit) -> FirstStageSummary {
    FirstStageSummary {
        n: loaded.state.n(),
        dropped_isolated: loaded.dropped.clone(),
        iterations: fit.newton_iters,
        converged: fit.converged,
        loglik: fit.loglik,
        lambda_hat: fit.lambda_hat(),
        lambda_bound_hit: fit.lambda_bound_hit,
        equilibrium_iterations: fit.equilibrium.iterations,
        mean_sigma: fit.equilibrium.mean_sigma(),
        mean_pi: fit.equilibrium.mean_pi(),
    }
}

fn write_theta(path: &Path, covariates: &[String], fit: &FirstStageFit) -> Result<()> {
    let theta = fit.theta_hat.to_vector();
    let se = fit.std_errors();
    let rows = fit.theta_hat.names(covariates).into_iter().enumerate().map(|(j, name)| {
        // A parameter held fixed during estimation has no standard error.
        let sej = se.get(j).copied().unwrap_or(f64::NAN);
        (vec![name], vec![theta[j], sej, p_value(theta[j], sej)])
    });
    write_table(path, &["name", "estimate", "std_error", "p_value"], numeric_rows(rows))
}

fn write_gammas(out: &Path, covariates: &[String], fit: &SecondStageFit) -> Result<()> {
    let mut rows = Vec::new();
    let mut vcov_rows = Vec::new();
    for treated in [true, false] {
        let arm = if treated { "1" } else { "0" };
        let gamma = fit.gamma(treated);
        let se = fit.std_errors(treated);
        let naive = fit.naive_std_errors(treated);
        for (j, name) in gamma.names(covariates).into_iter().enumerate() {
            let est = gamma.as_vector()[j];
            rows.push((vec![arm.to_string(), name], vec![est, se[j], naive[j], p_value(est, se[j])]));
        }
        let v = fit.vcov(treated);
        for i in 0..v.nrows() {
            for j in 0..v.ncols() {
                vcov_rows.push((vec![arm.to_string(), i.to_string(), j.to_string()], vec![v[(i, j)]]));
            }
        }
    }
    write_table(
        &out.join(GAMMA_FILE),
        &["arm", "coefficient", "estimate", "std_error", "naive_std_error", "p_value"],
        numeric_rows(rows),
    )?;
    write_table(&out.join(GAMMA_VCOV_FILE), &["arm", "row", "col", "value"], numeric_rows(vcov_rows))
}

fn write_equilibrium(path: &Path, loaded: &Loaded, fit: &FirstStageFit) -> Result<()> {
    let eq = &fit.equilibrium;
    let rows = loaded
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| vec![id.to_string(), fmt_num(eq.sigma[i]), fmt_num(eq.pi[i])])
        .collect();
    write_table(path, &["id", "sigma", "pi"], rows)
}

fn write_fitted(path: &Path, loaded: &Loaded, fit: &SecondStageFit) -> Result<()> {
    let rows = loaded
        .ids
        .iter()
        .zip(&fit.fitted_conditional_means)
        .map(|(id, v)| vec![id.to_string(), fmt_num(*v)])
        .collect();
    write_table(path, &["id", "fitted_mean_outcome"], rows)
}
