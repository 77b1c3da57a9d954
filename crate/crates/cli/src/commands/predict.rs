use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use serde::Serialize;

use spillover::counterfactual::{apply_policy, predict_mean_outcome, quantile_grid, sweep_threshold};
use spillover::io::fmt_num;
use spillover::{PolicyPrediction, PolicyRule, PredictOptions, PredictionMode, Variant};

use super::fitdir::{self, GAMMA_FILE, THETA_FILE};
use super::Context;
use crate::config::{pick, switch};
use crate::data::{self, DataSettings, Needs};
use crate::output::{ensure_dir, write_manifest, write_table};
use crate::settings::ModelSettings;
use crate::PredictArgs;

#[derive(Debug, Serialize)]
struct Settings {
    data: DataSettings,
    model: ModelSettings,
    fit: PathBuf,
    rule: Option<String>,
    sweep: bool,
    covariate: Option<String>,
    taus: Option<Vec<f64>>,
    paper_literal: bool,
}

/// Parse `name<=tau`.
pub fn parse_rule(text: &str) -> Result<PolicyRule> {
    let (name, tau) = text
        .split_once("<=")
        .with_context(|| format!("rule {text:?} is not of the form covariate<=threshold"))?;
    let name = name.trim();
    if name.is_empty() {
        bail!("rule {text:?} names no covariate");
    }
    let tau: f64 = tau
        .trim()
        .parse()
        .with_context(|| format!("rule {text:?}: invalid threshold"))?;
    if !tau.is_finite() {
        bail!("rule {text:?}: threshold must be finite");
    }
    Ok(PolicyRule {
        covariate: name.to_string(),
        tau,
    })
}

pub fn run(ctx: &Context, args: &PredictArgs) -> Result<()> {
    let p = &ctx.file.predict;
    let settings = Settings {
        data: DataSettings::resolve(&args.data, &ctx.file),
        model: ModelSettings::resolve(&args.model, &ctx.file)?,
        fit: fitdir::resolve(&args.fit, &ctx.file.data.fit)?,
        rule: pick(args.rule.clone(), &p.rule),
        sweep: switch(args.sweep, p.sweep),
        covariate: pick(args.covariate.clone(), &p.covariate),
        taus: pick(args.taus.clone(), &p.taus),
        paper_literal: switch(args.paper_literal, p.paper_literal),
    };
    let rule = settings.rule.as_deref().map(parse_rule).transpose()?;
    let loaded = data::load(
        &settings.data,
        Needs {
            assignment: rule.is_none() && !settings.sweep && settings.taus.is_none(),
            ..Needs::default()
        },
    )?;
    let s = &loaded.state;
    let theta = fitdir::read_theta(&settings.fit, s)?;
    let (g1, g0) = fitdir::read_gammas(&settings.fit, s.k())?;
    let mode = if settings.paper_literal {
        PredictionMode::Literal
    } else {
        PredictionMode::ControlFunction
    };
    let opts = |variant| PredictOptions {
        variant,
        mode,
        solver: settings.model.solver(),
    };
    let with = opts(Variant::WithInterference);
    let without = opts(Variant::NoInterference);

    let covariate = settings
        .covariate
        .clone()
        .or_else(|| rule.as_ref().map(|r| r.covariate.clone()))
        .unwrap_or_else(|| "wealth".to_string());
    let taus: Option<Vec<f64>> = if settings.sweep {
        Some(quantile_grid(s, &covariate)?)
    } else if let Some(t) = &settings.taus {
        Some(t.clone())
    } else {
        rule.as_ref().map(|r| vec![r.tau])
    };

    let pairs: Vec<(PolicyPrediction, PolicyPrediction)> = match &taus {
        Some(taus) => {
            let a = sweep_threshold(s, &covariate, &theta, &g1, &g0, taus, &with)?;
            let b = sweep_threshold(s, &covariate, &theta, &g1, &g0, taus, &without)?;
            a.into_iter().zip(b).collect()
        }
        None => vec![(
            predict_mean_outcome(s, &theta, &g1, &g0, &with)?,
            predict_mean_outcome(s, &theta, &g1, &g0, &without)?,
        )],
    };
    if let Some(r) = &rule {
        // Validate the single rule's covariate even when a sweep replaces its threshold.
        apply_policy(s, r)?;
    }

    ensure_dir(&ctx.out)?;
    let rows = pairs
        .iter()
        .map(|(a, b)| {
            vec![
                a.tau.map_or_else(|| "observed".to_string(), fmt_num),
                fmt_num(a.mean_outcome),
                fmt_num(b.mean_outcome),
                fmt_num(a.treated_share),
                fmt_num(a.mean_sigma),
                fmt_num(a.mean_pi),
            ]
        })
        .collect();
    write_table(
        &ctx.out.join("policy_curve.csv"),
        &[
            "tau",
            "mean_outcome_interference",
            "mean_outcome_no_interference",
            "treated_share",
            "mean_sigma",
            "mean_pi",
        ],
        rows,
    )?;

    let fit_files = [THETA_FILE, GAMMA_FILE].map(|f| settings.fit.join(f));
    let mut inputs: Vec<&Path> = settings.data.paths();
    inputs.extend(fit_files.iter().map(PathBuf::as_path));
    write_manifest(&ctx.out, "predict", ctx.seed, &settings, &inputs, &["policy_curve.csv"])?;
    Ok(())
}
