//! Average potential outcomes, direct and spillover effects, and first-stage marginal effects.

use nalgebra::{DMatrix, DVector};

use crate::equilibrium::{Equilibrium, GameParams, PublicState};
use crate::error::{Error, Result};
use crate::normal;
use crate::secondstage::OutcomeParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimand {
    /// `E[Y(1, pi)]`
    Apo1,
    /// `E[Y(0, pi)]`
    Apo0,
    /// `E[Y(1, pi) - Y(0, pi)]`
    Ade,
    /// `E[Y(d, pi) - Y(d, 0)]` for the stated arm.
    Ase { treated: bool },
}

impl Estimand {
    pub fn label(&self) -> &'static str {
        match self {
            Estimand::Apo1 => "apo1",
            Estimand::Apo0 => "apo0",
            Estimand::Ade => "ade",
            Estimand::Ase { treated: true } => "ase1",
            Estimand::Ase { treated: false } => "ase0",
        }
    }
}

/// An estimand evaluated on a grid of neighborhood scores.
#[derive(Debug, Clone)]
pub struct EffectCurve {
    pub estimand: Estimand,
    pub pi_grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Delta-method standard errors, one per grid point.
    pub se: Option<Vec<f64>>,
}

/// `0, 0.01, ..., 1`.
pub fn default_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Validation("neighborhood scores must lie in [0, 1]".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Validation("pi grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Column means of the covariate matrix.
pub fn covariate_means(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows() as f64;
    x.column_iter().map(|c| c.sum() / n).collect()
}

/// `(alpha_dm, beta_dm) = (mu_X' alpha_d, mu_X' beta_d)`.
pub fn mean_coefficients(gamma: &OutcomeParams, mu_x: &[f64]) -> (f64, f64) {
    let a = gamma.alpha().iter().zip(mu_x).map(|(a, m)| a * m).sum();
    let b = gamma.beta().iter().zip(mu_x).map(|(b, m)| b * m).sum();
    (a, b)
}

/// `E[Y(d, pi)] = alpha_dm + beta_dm pi`.
pub fn average_potential_outcome(gamma: &OutcomeParams, mu_x: &[f64], pi: f64) -> f64 {
    let (a, b) = mean_coefficients(gamma, mu_x);
    a + b * pi
}

/// `ADE(pi) = (alpha_1m - alpha_0m) + (beta_1m - beta_0m) pi`.
pub fn ade(gamma1: &OutcomeParams, gamma0: &OutcomeParams, mu_x: &[f64], pi: f64) -> f64 {
    let (a1, b1) = mean_coefficients(gamma1, mu_x);
    let (a0, b0) = mean_coefficients(gamma0, mu_x);
    (a1 - a0) + (b1 - b0) * pi
}

/// `ASE(pi, pi_tilde, d) = (pi_tilde - pi) beta_dm`.
pub fn ase(gamma: &OutcomeParams, mu_x: &[f64], pi: f64, pi_tilde: f64) -> f64 {
    let (_, b) = mean_coefficients(gamma, mu_x);
    (pi_tilde - pi) * b
}

/// Gradient of `c_a * alpha_dm + c_b * beta_dm` with respect to the stacked `gamma_d`.
fn linear_gradient(gamma: &OutcomeParams, mu_x: &[f64], c_a: f64, c_b: f64) -> DVector<f64> {
    let mut g = DVector::zeros(gamma.as_vector().len());
    for (j, m) in mu_x.iter().enumerate() {
        g[gamma.alpha_index(j)] = c_a * m;
        g[gamma.beta_index(j)] = c_b * m;
    }
    g
}

fn quad_form(g: &DVector<f64>, v: &DMatrix<f64>) -> f64 {
    (g.transpose() * v * g)[(0, 0)].max(0.0)
}

/// Curve of `E[Y(d, pi)]` with delta-method standard errors from `vcov`.
pub fn apo_curve(
    gamma: &OutcomeParams,
    vcov: Option<&DMatrix<f64>>,
    mu_x: &[f64],
    grid: &[f64],
    treated: bool,
) -> Result<EffectCurve> {
    check_grid(grid)?;
    let values = grid.iter().map(|&p| average_potential_outcome(gamma, mu_x, p)).collect();
    let se = vcov.map(|v| {
        grid.iter()
            .map(|&p| quad_form(&linear_gradient(gamma, mu_x, 1.0, p), v).sqrt())
            .collect()
    });
    Ok(EffectCurve {
        estimand: if treated { Estimand::Apo1 } else { Estimand::Apo0 },
        pi_grid: grid.to_vec(),
        values,
        se,
    })
}

/// Curve of `ADE(pi)`; the arms are estimated on disjoint samples, so their variances add.
pub fn ade_curve(
    gamma1: &OutcomeParams,
    gamma0: &OutcomeParams,
    vcovs: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
    mu_x: &[f64],
    grid: &[f64],
) -> Result<EffectCurve> {
    check_grid(grid)?;
    let values = grid.iter().map(|&p| ade(gamma1, gamma0, mu_x, p)).collect();
    let se = vcovs.map(|(v1, v0)| {
        grid.iter()
            .map(|&p| {
                let g1 = linear_gradient(gamma1, mu_x, 1.0, p);
                let g0 = linear_gradient(gamma0, mu_x, 1.0, p);
                (quad_form(&g1, v1) + quad_form(&g0, v0)).sqrt()
            })
            .collect()
    });
    Ok(EffectCurve {
        estimand: Estimand::Ade,
        pi_grid: grid.to_vec(),
        values,
        se,
    })
}

/// Curve of `ASE(pi_base, pi, d)` over the grid.
pub fn ase_curve(
    gamma: &OutcomeParams,
    vcov: Option<&DMatrix<f64>>,
    mu_x: &[f64],
    pi_base: f64,
    grid: &[f64],
    treated: bool,
) -> Result<EffectCurve> {
    check_grid(grid)?;
    let values = grid.iter().map(|&p| ase(gamma, mu_x, pi_base, p)).collect();
    let se = vcov.map(|v| {
        grid.iter()
            .map(|&p| quad_form(&linear_gradient(gamma, mu_x, 0.0, p - pi_base), v).sqrt())
            .collect()
    });
    Ok(EffectCurve {
        estimand: Estimand::Ase { treated },
        pi_grid: grid.to_vec(),
        values,
        se,
    })
}

/// Sample-average marginal effects `(1/n) sum_i phi(index_i) theta_k`, one per coefficient in
/// stacked order `(theta1, theta2, theta3)`.
pub fn first_stage_marginal_effects(s: &PublicState, theta: &GameParams, eq: &Equilibrium) -> Result<Vec<f64>> {
    if eq.sigma.len() != s.n() {
        return Err(Error::Validation("equilibrium does not match the public state".into()));
    }
    let base = s.base_index(theta)?;
    let avg_density = base
        .iter()
        .zip(&eq.pi)
        .map(|(b, p)| normal::pdf(b + theta.theta3 * p))
        .sum::<f64>()
        / s.n() as f64;
    Ok(theta.to_vector().iter().map(|c| avg_density * c).collect())
}
