//! Assemble the public state and observed data from input files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use serde::Serialize;

use spillover::io;
use spillover::network::{build_radius_graph, load_edge_list, remove_isolated};
use spillover::{Network, PublicState};

use crate::config::{pick, ConfigFile};
use crate::{DataArgs, MissingFile};

/// Resolved input locations.
#[derive(Debug, Clone, Default, Serialize, PartialEq)]
pub struct DataSettings {
    pub edges: Option<PathBuf>,
    pub coords: Option<PathBuf>,
    pub radius: Option<f64>,
    pub covariates: Option<PathBuf>,
    pub assignment: Option<PathBuf>,
    pub choice: Option<PathBuf>,
    pub outcome: Option<PathBuf>,
}

impl DataSettings {
    pub fn resolve(args: &DataArgs, file: &ConfigFile) -> Self {
        let d = &file.data;
        DataSettings {
            edges: pick(args.edges.clone(), &d.edges),
            coords: pick(args.coords.clone(), &d.coords),
            radius: pick(args.radius, &d.radius),
            covariates: pick(args.covariates.clone(), &d.covariates),
            assignment: pick(args.assignment.clone(), &d.assignment),
            choice: pick(args.choice.clone(), &d.choice),
            outcome: pick(args.outcome.clone(), &d.outcome),
        }
    }

    pub fn has_network(&self) -> bool {
        self.edges.is_some() || self.coords.is_some()
    }

    /// Every input path that is set.
    pub fn paths(&self) -> Vec<&Path> {
        [&self.edges, &self.coords, &self.covariates, &self.assignment, &self.choice, &self.outcome]
            .into_iter()
            .flatten()
            .map(PathBuf::as_path)
            .collect()
    }
}

/// Which optional inputs a command needs.
#[derive(Debug, Clone, Copy, Default)]
pub struct Needs {
    pub assignment: bool,
    pub choice: bool,
    pub outcome: bool,
}

#[derive(Debug)]
pub struct Loaded {
    pub state: PublicState,
    /// Input id of every retained agent, in state order.
    pub ids: Vec<usize>,
    /// Input ids of agents removed as isolated.
    pub dropped: Vec<usize>,
    pub d: Option<Vec<bool>>,
    pub y: Option<Vec<f64>>,
}

pub fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(MissingFile(path.to_path_buf()).into())
    }
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    match value {
        Some(p) => {
            require_file(p)?;
            Ok(p)
        }
        None => bail!("missing required input --{flag} (or [data] {flag} in the config)"),
    }
}

/// Load network, covariates (an intercept named `const` is prepended unless
/// present), assignment and observed data, then drop isolated agents.
pub fn load(settings: &DataSettings, needs: Needs) -> Result<Loaded> {
    for p in settings.paths() {
        require_file(p)?;
    }
    if settings.edges.is_some() == settings.coords.is_some() {
        bail!("give exactly one network source: --edges or --coords with --radius");
    }

    let covariates = match &settings.covariates {
        Some(p) => Some(io::read_covariates(p)?),
        None => None,
    };
    let assignment = if needs.assignment {
        Some(io::read_binary(required(&settings.assignment, "assignment")?, None)?)
    } else {
        settings.assignment.as_deref().map(|p| io::read_binary(p, None)).transpose()?
    };
    let choice = if needs.choice {
        Some(io::read_binary(required(&settings.choice, "choice")?, None)?)
    } else {
        None
    };
    let outcome = if needs.outcome {
        Some(io::read_values(required(&settings.outcome, "outcome")?, None)?)
    } else {
        None
    };
    let coords = settings.coords.as_deref().map(io::read_coords).transpose()?;

    let n = covariates
        .as_ref()
        .map(|(_, x)| x.nrows())
        .or(assignment.as_ref().map(Vec::len))
        .or(choice.as_ref().map(Vec::len))
        .or(coords.as_ref().map(|c| c.points().len()))
        .context("cannot infer the number of agents: give --covariates or --assignment")?;
    let check = |len: usize, what: &str| -> Result<()> {
        if len != n {
            bail!("{what} has {len} rows, expected {n}");
        }
        Ok(())
    };
    if let Some(z) = &assignment {
        check(z.len(), "assignment")?;
    }
    if let Some(d) = &choice {
        check(d.len(), "choice")?;
    }
    if let Some(y) = &outcome {
        check(y.len(), "outcome")?;
    }

    let network: Network = match (&settings.edges, &coords) {
        (Some(path), _) => load_edge_list(path, n)?,
        (None, Some(c)) => {
            check(c.points().len(), "coordinates")?;
            let radius = settings.radius.context("--coords needs --radius")?;
            build_radius_graph(c, radius)?
        }
        (None, None) => unreachable!("checked above"),
    };

    let (names, x) = match covariates {
        Some((names, x)) if names.iter().any(|c| c == "const") => (names, x),
        Some((names, x)) => {
            let mut all = vec!["const".to_string()];
            all.extend(names);
            let k = x.ncols();
            (all, DMatrix::from_fn(n, k + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] }))
        }
        None => (vec!["const".to_string()], DMatrix::from_element(n, 1, 1.0)),
    };

    let removal = remove_isolated(&network);
    let kept = &removal.kept;
    let filter_bool = |v: Vec<bool>| -> Vec<bool> { kept.iter().map(|&i| v[i]).collect() };
    let x = DMatrix::from_fn(kept.len(), x.ncols(), |r, c| x[(kept[r], c)]);
    let z = assignment.map(filter_bool).unwrap_or_else(|| vec![false; kept.len()]);
    let state = PublicState::new(removal.network.clone(), x, z, names)?;
    Ok(Loaded {
        state,
        ids: kept.clone(),
        dropped: removal.dropped.clone(),
        d: choice.map(filter_bool),
        y: outcome.map(|v| kept.iter().map(|&i| v[i]).collect()),
    })
}
