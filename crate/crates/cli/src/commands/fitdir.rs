//! Read back the estimates written by `estimate`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use nalgebra::{DMatrix, DVector};

use spillover::{GameParams, OutcomeParams, PublicState};

use crate::data::require_file;

pub const THETA_FILE: &str = "theta_hat.csv";
pub const GAMMA_FILE: &str = "gamma_hat.csv";
pub const GAMMA_VCOV_FILE: &str = "gamma_vcov.csv";

pub fn resolve(flag: &Option<PathBuf>, file: &Option<PathBuf>) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| file.clone())
        .context("missing --fit (directory of a previous estimate run)")
}

fn records(path: &Path) -> Result<Vec<csv::StringRecord>> {
    require_file(path)?;
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .with_context(|| format!("reading {}", path.display()))
}

fn number(rec: &csv::StringRecord, col: usize, path: &Path) -> Result<f64> {
    let field = rec.get(col).unwrap_or("");
    field
        .trim()
        .parse()
        .with_context(|| format!("{}: invalid number {field:?}", path.display()))
}

/// Saved first-stage estimate; its length must match the state's covariates.
pub fn read_theta(dir: &Path, s: &PublicState) -> Result<GameParams> {
    let path = dir.join(THETA_FILE);
    let values = records(&path)?
        .iter()
        .map(|r| number(r, 1, &path))
        .collect::<Result<Vec<f64>>>()?;
    if values.len() != s.k() + 2 {
        bail!(
            "{} has {} parameters, the data have {} covariates",
            path.display(),
            values.len(),
            s.k()
        );
    }
    Ok(GameParams::from_slice(&values)?)
}

/// Saved outcome coefficients for both arms.
pub fn read_gammas(dir: &Path, k: usize) -> Result<(OutcomeParams, OutcomeParams)> {
    let path = dir.join(GAMMA_FILE);
    let mut arms: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for r in records(&path)? {
        let arm = usize::from(r.get(0) == Some("1"));
        arms[arm].push(number(&r, 2, &path)?);
    }
    let build = |v: &Vec<f64>| -> Result<OutcomeParams> {
        if v.len() < 2 * k + 2 || (v.len() - 2 * k) % 2 != 0 {
            bail!("{}: {} coefficients do not fit {k} covariates", path.display(), v.len());
        }
        let order = (v.len() - 2 * k) / 2;
        Ok(OutcomeParams::from_vector(k, order, DVector::from_column_slice(v))?)
    };
    Ok((build(&arms[1])?, build(&arms[0])?))
}

/// Corrected covariance matrices `(treated, untreated)`.
pub fn read_gamma_vcov(dir: &Path, p1: usize, p0: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let path = dir.join(GAMMA_VCOV_FILE);
    let mut v1 = DMatrix::from_element(p1, p1, f64::NAN);
    let mut v0 = DMatrix::from_element(p0, p0, f64::NAN);
    for r in records(&path)? {
        let m = if r.get(0) == Some("1") { &mut v1 } else { &mut v0 };
        let idx = |c: usize| -> Result<usize> {
            r.get(c)
                .and_then(|f| f.trim().parse().ok())
                .with_context(|| format!("{}: invalid index", path.display()))
        };
        let (i, j) = (idx(1)?, idx(2)?);
        if i >= m.nrows() || j >= m.ncols() {
            bail!("{}: index ({i}, {j}) out of range", path.display());
        }
        m[(i, j)] = number(&r, 3, &path)?;
    }
    if v1.iter().chain(v0.iter()).any(|x| x.is_nan()) {
        bail!("{} is incomplete", path.display());
    }
    Ok((v1, v0))
}
