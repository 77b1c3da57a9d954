//! TOML run configuration. Every key is optional; command-line flags win.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::MissingFile;

#[derive(Debug, Default, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub data: DataSection,
    pub model: ModelSection,
    pub run: RunSection,
    pub predict: PredictSection,
    pub effects: EffectsSection,
    pub dgp: DgpSection,
}

#[derive(Debug, Default, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub edges: Option<PathBuf>,
    pub coords: Option<PathBuf>,
    pub radius: Option<f64>,
    pub covariates: Option<PathBuf>,
    pub assignment: Option<PathBuf>,
    pub choice: Option<PathBuf>,
    pub outcome: Option<PathBuf>,
    /// Directory holding a previous `estimate` run.
    pub fit: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub cf_order: Option<usize>,
    pub allow_nonunique: Option<bool>,
    pub dof_adjust: Option<bool>,
    pub solver_tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub max_newton: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub threads: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub rule: Option<String>,
    pub sweep: Option<bool>,
    pub covariate: Option<String>,
    pub taus: Option<Vec<f64>>,
    pub paper_literal: Option<bool>,
}

#[derive(Debug, Default, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EffectsSection {
    pub grid_step: Option<f64>,
    pub pi_base: Option<f64>,
}

/// Data-generating process; unset keys take the reference design.
#[derive(Debug, Default, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DgpSection {
    pub theta1: Option<Vec<f64>>,
    pub theta2: Option<f64>,
    pub theta3: Option<f64>,
    pub alpha1: Option<Vec<f64>>,
    pub beta1: Option<Vec<f64>>,
    pub alpha0: Option<Vec<f64>>,
    pub beta0: Option<Vec<f64>>,
    pub loadings: Option<[f64; 4]>,
    pub noise_sd: Option<f64>,
    pub n_points: Option<usize>,
    pub radius: Option<f64>,
    pub target_degree: Option<f64>,
    pub assign_prob: Option<f64>,
    pub wealth_mean: Option<f64>,
    pub wealth_sd: Option<f64>,
}

pub fn load(path: &Path) -> Result<ConfigFile> {
    if !path.is_file() {
        return Err(MissingFile(path.to_path_buf()).into());
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Keep the first value that is set.
pub fn pick<T: Clone>(flag: Option<T>, file: &Option<T>) -> Option<T> {
    flag.or_else(|| file.clone())
}

/// Boolean switches: a flag can only turn an option on.
pub fn switch(flag: bool, file: Option<bool>) -> bool {
    flag || file.unwrap_or(false)
}
