//! Outcome predictions under counterfactual assignment rules.
//!
//! A rule changes only the assignment vector. The equilibrium is re-solved
//! at the fitted first-stage parameters and the fitted outcome model is
//! averaged over both arms with weights `sigma_i` and `1 - sigma_i`.

use rayon::prelude::*;

use crate::equilibrium::{solve_equilibrium, GameParams, PublicState, SolverConfig};
use crate::error::{Error, Result};
use crate::secondstage::{conditional_mean_mixture, OutcomeParams};

/// Means-tested assignment `Z_i = 1{covariate_i <= tau}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRule {
    pub covariate: String,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    WithInterference,
    /// Spillover channel shut off: `theta3 = 0` in the equilibrium and `pi = 0` in the outcome model.
    NoInterference,
}

impl Variant {
    pub fn label(&self) -> &'static str {
        match self {
            Variant::WithInterference => "with-interference",
            Variant::NoInterference => "no-interference",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PredictionMode {
    /// Arm conditional means include the fitted control-function loadings.
    #[default]
    ControlFunction,
    /// Arm conditional means use `X'alpha_d + pi X'beta_d` only.
    Literal,
}

#[derive(Debug, Clone, Copy)]
pub struct PredictOptions {
    pub variant: Variant,
    pub mode: PredictionMode,
    pub solver: SolverConfig,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            variant: Variant::WithInterference,
            mode: PredictionMode::ControlFunction,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PolicyPrediction {
    pub tau: Option<f64>,
    pub unit_predictions: Vec<f64>,
    pub mean_outcome: f64,
    pub treated_share: f64,
    pub mean_sigma: f64,
    pub mean_pi: f64,
    pub variant: Variant,
}

/// Replace the assignment vector by the rule's indicator; network and covariates are untouched.
pub fn apply_policy(s: &PublicState, rule: &PolicyRule) -> Result<PublicState> {
    let col = s
        .covariate_index(&rule.covariate)
        .ok_or_else(|| Error::Validation(format!("unknown covariate {:?}", rule.covariate)))?;
    if rule.tau.is_nan() {
        return Err(Error::Validation("threshold is NaN".into()));
    }
    let z = (0..s.n()).map(|i| s.x()[(i, col)] <= rule.tau).collect();
    s.with_assignment(z)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Expected outcomes at the equilibrium implied by `s` and `theta`.
pub fn predict_mean_outcome(
    s: &PublicState,
    theta: &GameParams,
    gamma1: &OutcomeParams,
    gamma0: &OutcomeParams,
    opts: &PredictOptions,
) -> Result<PolicyPrediction> {
    let (theta, zero_pi) = match opts.variant {
        Variant::WithInterference => (theta.clone(), false),
        Variant::NoInterference => (GameParams::new(theta.theta1.clone(), theta.theta2, 0.0), true),
    };
    let eq = solve_equilibrium(s, &theta, &opts.solver)?;
    let pi_used = if zero_pi { vec![0.0; s.n()] } else { eq.pi.clone() };
    let (g1, g0) = match opts.mode {
        PredictionMode::ControlFunction => (gamma1.clone(), gamma0.clone()),
        PredictionMode::Literal => (gamma1.without_control_function(), gamma0.without_control_function()),
    };
    let units = conditional_mean_mixture(s.x(), &eq.sigma, &pi_used, &g1, &g0)?;
    Ok(PolicyPrediction {
        tau: None,
        mean_outcome: mean(&units),
        unit_predictions: units,
        treated_share: s.z().iter().filter(|&&z| z).count() as f64 / s.n() as f64,
        mean_sigma: eq.mean_sigma(),
        mean_pi: mean(&pi_used),
        variant: opts.variant,
    })
}

/// One prediction per threshold, evaluated in parallel and returned in grid order.
pub fn sweep_threshold(
    s: &PublicState,
    covariate: &str,
    theta: &GameParams,
    gamma1: &OutcomeParams,
    gamma0: &OutcomeParams,
    taus: &[f64],
    opts: &PredictOptions,
) -> Result<Vec<PolicyPrediction>> {
    taus.par_iter()
        .map(|&tau| {
            let rule = PolicyRule {
                covariate: covariate.to_string(),
                tau,
            };
            let s_new = apply_policy(s, &rule)?;
            let mut p = predict_mean_outcome(&s_new, theta, gamma1, gamma0, opts)?;
            p.tau = Some(tau);
            Ok(p)
        })
        .collect()
}

/// Empirical quantiles of a covariate at 0, 5, ..., 100 percent (nearest rank on the sorted values).
pub fn quantile_grid(s: &PublicState, covariate: &str) -> Result<Vec<f64>> {
    let col = s
        .covariate_index(covariate)
        .ok_or_else(|| Error::Validation(format!("unknown covariate {covariate:?}")))?;
    let mut v: Vec<f64> = s.x().column(col).iter().copied().collect();
    v.sort_by(f64::total_cmp);
    let last = v.len() - 1;
    Ok((0..=20)
        .map(|q| v[((q as f64 / 20.0) * last as f64).round() as usize])
        .collect())
}
