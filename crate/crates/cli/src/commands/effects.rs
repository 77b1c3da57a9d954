use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use serde::Serialize;

use spillover::effects::{
    ade_curve, apo_curve, ase_curve, covariate_means, default_grid, first_stage_marginal_effects,
};
use spillover::io::fmt_num;
use spillover::{solve_equilibrium, EffectCurve};

use super::fitdir::{self, GAMMA_FILE, GAMMA_VCOV_FILE, THETA_FILE};
use super::Context;
use crate::config::pick;
use crate::data::{self, DataSettings, Needs};
use crate::output::{ensure_dir, numeric_rows, write_manifest, write_table};
use crate::settings::ModelSettings;
use crate::EffectsArgs;

#[derive(Debug, Serialize)]
struct Settings {
    data: DataSettings,
    model: ModelSettings,
    fit: PathBuf,
    grid_step: Option<f64>,
    pi_base: f64,
}

fn grid(step: Option<f64>) -> Result<Vec<f64>> {
    let Some(step) = step else {
        return Ok(default_grid());
    };
    if !(step > 0.0 && step <= 1.0) {
        bail!("grid step must lie in (0, 1], got {step}");
    }
    let m = (1.0 / step).round() as usize;
    if ((m as f64) * step - 1.0).abs() > 1e-9 {
        bail!("grid step {step} does not divide [0, 1] evenly");
    }
    Ok((0..=m).map(|i| i as f64 / m as f64).collect())
}

fn curve_rows(curve: &EffectCurve, arm: Option<&str>) -> Vec<(Vec<String>, Vec<f64>)> {
    curve
        .pi_grid
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let se = curve.se.as_ref().map_or(f64::NAN, |s| s[i]);
            (arm.map(|a| vec![a.to_string()]).unwrap_or_default(), vec![p, curve.values[i], se])
        })
        .collect()
}

pub fn run(ctx: &Context, args: &EffectsArgs) -> Result<()> {
    let e = &ctx.file.effects;
    let settings = Settings {
        data: DataSettings::resolve(&args.data, &ctx.file),
        model: ModelSettings::resolve(&args.model, &ctx.file)?,
        fit: fitdir::resolve(&args.fit, &ctx.file.data.fit)?,
        grid_step: pick(args.grid_step, &e.grid_step),
        pi_base: pick(args.pi_base, &e.pi_base).unwrap_or(0.0),
    };
    if !(0.0..=1.0).contains(&settings.pi_base) {
        bail!("pi-base must lie in [0, 1]");
    }
    let grid = grid(settings.grid_step)?;
    let loaded = data::load(
        &settings.data,
        Needs {
            assignment: true,
            ..Needs::default()
        },
    )?;
    let s = &loaded.state;
    let theta = fitdir::read_theta(&settings.fit, s)?;
    let (g1, g0) = fitdir::read_gammas(&settings.fit, s.k())?;
    let (v1, v0) = fitdir::read_gamma_vcov(&settings.fit, g1.as_vector().len(), g0.as_vector().len())?;
    let mu = covariate_means(s.x());

    ensure_dir(&ctx.out)?;
    let ade = ade_curve(&g1, &g0, Some((&v1, &v0)), &mu, &grid)?;
    write_table(&ctx.out.join("ade_curve.csv"), &["pi", "estimate", "se"], numeric_rows(curve_rows(&ade, None)))?;

    let mut ase_rows = Vec::new();
    let mut apo_rows = Vec::new();
    for (treated, g, v) in [(true, &g1, &v1), (false, &g0, &v0)] {
        let arm = if treated { "1" } else { "0" };
        ase_rows.extend(curve_rows(&ase_curve(g, Some(v), &mu, settings.pi_base, &grid, treated)?, Some(arm)));
        apo_rows.extend(curve_rows(&apo_curve(g, Some(v), &mu, &grid, treated)?, Some(arm)));
    }
    let arm_header = ["arm", "pi", "estimate", "se"];
    write_table(&ctx.out.join("ase_curve.csv"), &arm_header, numeric_rows(ase_rows))?;
    write_table(&ctx.out.join("apo_curves.csv"), &arm_header, numeric_rows(apo_rows))?;

    let eq = solve_equilibrium(s, &theta, &settings.model.solver())?;
    let me = first_stage_marginal_effects(s, &theta, &eq)?;
    let me_rows = theta
        .names(s.covariate_names())
        .into_iter()
        .zip(me)
        .map(|(name, v)| vec![name, fmt_num(v)])
        .collect();
    write_table(&ctx.out.join("marginal_effects.csv"), &["name", "marginal_effect"], me_rows)?;

    let fit_files = [THETA_FILE, GAMMA_FILE, GAMMA_VCOV_FILE].map(|f| settings.fit.join(f));
    let mut inputs: Vec<&Path> = settings.data.paths();
    inputs.extend(fit_files.iter().map(PathBuf::as_path));
    write_manifest(
        &ctx.out,
        "effects",
        ctx.seed,
        &settings,
        &inputs,
        &["ade_curve.csv", "ase_curve.csv", "apo_curves.csv", "marginal_effects.csv"],
    )?;
    Ok(())
}
