use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Result;
use serde::Serialize;

use spillover::io::{write_id_table, write_text};
use spillover::network::format_edge_list;
use spillover::simulate::{generate_data, parameter_names, synthetic_state};
use spillover::solve_equilibrium;

use super::dgp::{load_spec, DgpSettings};
use super::Context;
use crate::output::{ensure_dir, write_json, write_manifest, write_table};
use crate::settings::ModelSettings;
use crate::SimulateArgs;

#[derive(Debug, Serialize)]
struct Settings {
    model: ModelSettings,
    dgp: DgpSettings,
    spec: Option<PathBuf>,
    rep: u64,
}

#[derive(Debug, Serialize)]
struct Truth {
    n: usize,
    dropped_isolated: usize,
    mean_degree: f64,
    take_up: f64,
    lambda: f64,
    parameters: BTreeMap<String, f64>,
}

pub fn run(ctx: &Context, args: &SimulateArgs) -> Result<()> {
    let spec_file = args.spec.as_deref().map(load_spec).transpose()?;
    let settings = Settings {
        model: ModelSettings::resolve(&args.model, &ctx.file)?,
        dgp: DgpSettings::resolve(spec_file.as_ref(), &ctx.file.dgp, ctx.seed)?,
        spec: args.spec.clone(),
        rep: args.rep,
    };
    let dgp = settings.dgp.dgp();
    let synth = synthetic_state(&settings.dgp.design(), dgp.seed)?;
    let s = &synth.state;
    let eq = solve_equilibrium(s, &dgp.theta0, &settings.model.solver())?;
    let data = generate_data(s, &eq, &dgp, settings.rep)?;

    let out = &ctx.out;
    ensure_dir(out)?;
    let column = |v: &[f64]| -> Vec<Vec<f64>> { v.iter().map(|&x| vec![x]).collect() };
    let flags = |path: &str, name: &str, v: &[bool]| -> Result<()> {
        let rows = v.iter().enumerate().map(|(i, &b)| vec![i.to_string(), u8::from(b).to_string()]).collect();
        write_table(&out.join(path), &["id", name], rows)
    };
    let pts: Vec<Vec<f64>> = synth.coords.points().iter().map(|p| p.to_vec()).collect();

    let mut outputs = vec!["coords.csv", "edges.csv"];
    write_id_table(&out.join("coords.csv"), &["x", "y"], &pts)?;
    write_text(&out.join("edges.csv"), &format_edge_list(s.network()))?;
    if s.k() > 1 {
        let names: Vec<&str> = s.covariate_names()[1..].iter().map(String::as_str).collect();
        let rows: Vec<Vec<f64>> = (0..s.n()).map(|i| (1..s.k()).map(|j| s.x()[(i, j)]).collect()).collect();
        write_id_table(&out.join("covariates.csv"), &names, &rows)?;
        outputs.push("covariates.csv");
    }
    flags("assignment.csv", "z", s.z())?;
    flags("choice.csv", "d", &data.d)?;
    write_id_table(&out.join("outcome.csv"), &["y"], &column(&data.y))?;
    let eq_rows: Vec<Vec<f64>> = eq.sigma.iter().zip(&eq.pi).map(|(a, b)| vec![*a, *b]).collect();
    write_id_table(&out.join("equilibrium_true.csv"), &["sigma", "pi"], &eq_rows)?;

    let truth = Truth {
        n: s.n(),
        dropped_isolated: synth.dropped.len(),
        mean_degree: s.network().mean_degree(),
        take_up: data.d.iter().filter(|&&x| x).count() as f64 / s.n() as f64,
        lambda: dgp.theta0.lambda(),
        parameters: parameter_names(s, &dgp)?.into_iter().zip(dgp.truth_vector()?).collect(),
    };
    write_json(&out.join("truth.json"), &truth)?;
    outputs.extend(["assignment.csv", "choice.csv", "outcome.csv", "equilibrium_true.csv", "truth.json"]);

    let inputs: Vec<&std::path::Path> = settings.spec.iter().map(PathBuf::as_path).collect();
    write_manifest(out, "simulate", Some(dgp.seed), &settings, &inputs, &outputs)?;
    Ok(())
}
