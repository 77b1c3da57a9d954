//! Control-function outcome regressions with generated regressors.
//!
//! Within each treatment arm, outcomes are regressed on
//! `W_i = [X_i, lambda_i, pi_i X_i, pi_i lambda_i]`, where `lambda_i` is the
//! inverse Mills ratio for the agent's realized choice evaluated at the
//! fitted equilibrium probability. Standard errors add the first-stage
//! sampling error of `theta_hat` to the heteroskedasticity-robust sandwich.

use nalgebra::{DMatrix, DVector};

use crate::equilibrium::{neighbor_average_rows, PublicState};
use crate::error::{Error, Result};
use crate::firststage::FirstStageFit;
use crate::linalg::{least_squares, reciprocal_condition, select_rows, spd_inverse, RANK_RCOND};
use crate::normal;

/// Probability clamp applied before Mills ratios during estimation.
pub const MILLS_CLAMP: f64 = 1e-6;

fn check_open_unit(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma < 1.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!("probability {sigma} outside (0,1)")))
    }
}

/// `lambda_1(sigma) = -phi(Phi^{-1}(sigma)) / sigma`, i.e. `E[v | v <= Phi^{-1}(sigma)]`.
pub fn mills1(sigma: f64) -> Result<f64> {
    check_open_unit(sigma)?;
    Ok(-normal::pdf(normal::quantile(sigma)) / sigma)
}

/// `lambda_0(sigma) = phi(Phi^{-1}(sigma)) / (1 - sigma)`, i.e. `E[v | v > Phi^{-1}(sigma)]`.
pub fn mills0(sigma: f64) -> Result<f64> {
    check_open_unit(sigma)?;
    Ok(normal::pdf(normal::quantile(sigma)) / (1.0 - sigma))
}

/// Quadratic control-function term for the treated arm:
/// `t phi(t) / sigma + (phi(t) / sigma)^2` with `t = Phi^{-1}(sigma)`.
///
/// This equals `1 - Var(v | v <= t)`.
pub fn mills_quadratic(sigma: f64) -> Result<f64> {
    check_open_unit(sigma)?;
    let t = normal::quantile(sigma);
    let a = normal::pdf(t) / sigma;
    Ok(t * a + a * a)
}

/// Untreated-arm counterpart of [`mills_quadratic`] (truncation `v > t`), equal to `mills_quadratic(1 - sigma)`.
pub fn mills_quadratic0(sigma: f64) -> Result<f64> {
    check_open_unit(sigma)?;
    let t = normal::quantile(sigma);
    let a = normal::pdf(t) / (1.0 - sigma);
    Ok(-t * a + a * a)
}

/// Control-function values for one arm, `(linear, quadratic)`, at a probability already inside `(0,1)`.
fn control_terms(sigma: f64, treated: bool) -> (f64, f64) {
    let t = normal::quantile(sigma);
    let f = normal::pdf(t);
    if treated {
        let a = f / sigma;
        (-a, t * a + a * a)
    } else {
        let a = f / (1.0 - sigma);
        (a, -t * a + a * a)
    }
}

/// Derivatives of [`control_terms`] with respect to `sigma`.
fn control_terms_deriv(sigma: f64, treated: bool) -> (f64, f64) {
    let t = normal::quantile(sigma);
    let f = normal::pdf(t);
    // d t / d sigma = 1 / phi(t), d phi(t) / d sigma = -t.
    let (s, sign) = if treated { (sigma, 1.0) } else { (1.0 - sigma, -1.0) };
    // a = phi(t)/s with ds/dsigma = sign.
    let a = f / s;
    let da = (-t * s - f * sign) / (s * s);
    // linear term is -a (treated) or +a (untreated).
    let dlin = if treated { -da } else { da };
    // quadratic: sign * t * a + a^2.
    let dq = sign * (a / f + t * da) + 2.0 * a * da;
    (dlin, dq)
}

/// Generated regressors with the number of clamped probabilities.
#[derive(Debug, Clone)]
pub struct Regressors {
    pub w: DMatrix<f64>,
    pub clamped: usize,
}

fn design_row(x: &DMatrix<f64>, i: usize, pi: f64, lin: f64, quad: f64, order: usize, out: &mut [f64]) {
    let k = x.ncols();
    let block = k + order;
    for j in 0..k {
        out[j] = x[(i, j)];
        out[block + j] = pi * x[(i, j)];
    }
    out[k] = lin;
    out[block + k] = pi * lin;
    if order == 2 {
        out[k + 1] = quad;
        out[block + k + 1] = pi * quad;
    }
}

/// Number of columns of `W` for `k` covariates and control-function order `order`.
pub fn design_width(k: usize, order: usize) -> usize {
    2 * (k + order)
}

fn check_order(order: usize) -> Result<()> {
    if order == 1 || order == 2 {
        Ok(())
    } else {
        Err(Error::Validation(format!("control-function order must be 1 or 2, got {order}")))
    }
}

/// `W_i = [X_i, lambda_i, pi_i X_i, pi_i lambda_i]` (order 1) with
/// `lambda_i = D_i lambda_1(sigma_i) + (1 - D_i) lambda_0(sigma_i)`; order 2
/// appends the quadratic term after `lambda_i` in both blocks.
pub fn build_regressors(
    x: &DMatrix<f64>,
    sigma: &[f64],
    pi: &[f64],
    d: &[bool],
    order: usize,
) -> Result<Regressors> {
    check_order(order)?;
    let n = x.nrows();
    if sigma.len() != n || pi.len() != n || d.len() != n {
        return Err(Error::Validation("regressor inputs differ in length".into()));
    }
    let mut w = DMatrix::zeros(n, design_width(x.ncols(), order));
    let mut row = vec![0.0; w.ncols()];
    let mut clamped = 0;
    for i in 0..n {
        let s = normal::clamp_prob(sigma[i], MILLS_CLAMP);
        if s != sigma[i] {
            clamped += 1;
        }
        let (lin, quad) = control_terms(s, d[i]);
        design_row(x, i, pi[i], lin, quad, order, &mut row);
        for (c, v) in row.iter().enumerate() {
            w[(i, c)] = *v;
        }
    }
    Ok(Regressors { w, clamped })
}

/// Design for every agent as if assigned to arm `treated`, used for conditional means and predictions.
pub fn arm_design(x: &DMatrix<f64>, sigma: &[f64], pi: &[f64], treated: bool, order: usize) -> Result<DMatrix<f64>> {
    build_regressors(x, sigma, pi, &vec![treated; x.nrows()], order).map(|r| r.w)
}

/// Outcome-equation coefficients for one arm, stacked as `(alpha, rho_u, beta, rho_e)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeParams {
    k: usize,
    order: usize,
    coef: DVector<f64>,
}

impl OutcomeParams {
    pub fn from_vector(k: usize, order: usize, coef: DVector<f64>) -> Result<Self> {
        check_order(order)?;
        if coef.len() != design_width(k, order) {
            return Err(Error::Validation(format!(
                "coefficient vector has {} entries, expected {}",
                coef.len(),
                design_width(k, order)
            )));
        }
        Ok(OutcomeParams { k, order, coef })
    }

    /// Linear control-function specification.
    pub fn linear(alpha: &[f64], rho_u: f64, beta: &[f64], rho_e: f64) -> Result<Self> {
        if alpha.len() != beta.len() {
            return Err(Error::Validation("alpha and beta differ in length".into()));
        }
        let mut v = alpha.to_vec();
        v.push(rho_u);
        v.extend_from_slice(beta);
        v.push(rho_e);
        OutcomeParams::from_vector(alpha.len(), 1, DVector::from_vec(v))
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.coef
    }

    pub fn alpha(&self) -> &[f64] {
        &self.coef.as_slice()[..self.k]
    }

    pub fn rho_u(&self) -> f64 {
        self.coef[self.k]
    }

    pub fn beta(&self) -> &[f64] {
        let start = self.k + self.order;
        &self.coef.as_slice()[start..start + self.k]
    }

    pub fn rho_e(&self) -> f64 {
        self.coef[2 * self.k + self.order]
    }

    /// Index of `alpha_j` in the stacked vector.
    pub fn alpha_index(&self, j: usize) -> usize {
        j
    }

    /// Index of `beta_j` in the stacked vector.
    pub fn beta_index(&self, j: usize) -> usize {
        self.k + self.order + j
    }

    /// Indices of the control-function loadings in the stacked vector.
    pub fn rho_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (self.k..self.k + self.order).collect();
        idx.extend((2 * self.k + self.order)..(2 * self.k + 2 * self.order));
        idx
    }

    /// Copy with all control-function loadings set to zero.
    pub fn without_control_function(&self) -> Self {
        let mut c = self.clone();
        for i in self.rho_indices() {
            c.coef[i] = 0.0;
        }
        c
    }

    pub fn names(&self, covariates: &[String]) -> Vec<String> {
        let cov = |j: usize| covariates.get(j).cloned().unwrap_or_else(|| j.to_string());
        let mut names: Vec<String> = (0..self.k).map(|j| format!("alpha[{}]", cov(j))).collect();
        names.push("rho_u".into());
        if self.order == 2 {
            names.push("rho_u2".into());
        }
        names.extend((0..self.k).map(|j| format!("beta[{}]", cov(j))));
        names.push("rho_e".into());
        if self.order == 2 {
            names.push("rho_e2".into());
        }
        names
    }
}

#[derive(Debug, Clone)]
pub struct SecondStageConfig {
    /// 1 = linear control function; 2 adds the quadratic term.
    pub cf_order: usize,
    /// Inflate the heteroskedasticity term by `n_d / (n_d - p)`.
    pub dof_adjust: bool,
}

impl Default for SecondStageConfig {
    fn default() -> Self {
        SecondStageConfig {
            cf_order: 1,
            dof_adjust: false,
        }
    }
}

/// Point estimates from the two arm-specific regressions.
#[derive(Debug, Clone)]
pub struct SecondStagePoint {
    pub gamma1: OutcomeParams,
    pub gamma0: OutcomeParams,
    /// `Y_i - W_i' gamma_{D_i}`.
    pub residuals: Vec<f64>,
}

fn arm_rows(d: &[bool], arm: bool) -> Vec<usize> {
    (0..d.len()).filter(|&i| d[i] == arm).collect()
}

/// Least squares of `Y` on `W` separately within `D = 1` and `D = 0`.
pub fn fit_second_stage(y: &[f64], d: &[bool], w: &DMatrix<f64>, k: usize, order: usize) -> Result<SecondStagePoint> {
    if y.len() != w.nrows() || d.len() != w.nrows() {
        return Err(Error::Validation("outcome, choice and regressor rows differ".into()));
    }
    let fit_arm = |arm: bool| -> Result<OutcomeParams> {
        let rows = arm_rows(d, arm);
        let label = if arm { "treated" } else { "untreated" };
        if rows.is_empty() {
            return Err(Error::RankCondition(format!("{label} subsample is empty")));
        }
        let wa = select_rows(w, &rows);
        if rows.len() < wa.ncols() || reciprocal_condition(&(wa.transpose() * &wa)) < RANK_RCOND {
            return Err(Error::RankCondition(format!(
                "{label} moment matrix is singular ({} rows, {} regressors)",
                rows.len(),
                wa.ncols()
            )));
        }
        let ya = DVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i]));
        let coef = least_squares(&wa, &ya)
            .ok_or_else(|| Error::RankCondition(format!("{label} least squares failed")))?;
        OutcomeParams::from_vector(k, order, coef)
    };
    let gamma1 = fit_arm(true)?;
    let gamma0 = fit_arm(false)?;
    let residuals = (0..y.len())
        .map(|i| {
            let g = if d[i] { &gamma1 } else { &gamma0 };
            y[i] - w.row(i).dot(&g.coef.transpose())
        })
        .collect();
    Ok(SecondStagePoint {
        gamma1,
        gamma0,
        residuals,
    })
}

/// Sandwich pieces for one arm.
#[derive(Debug, Clone)]
pub struct ArmVariance {
    /// `Upsilon^{-1} Psi Upsilon^{-1} / n`.
    pub corrected: DMatrix<f64>,
    /// `Upsilon^{-1} HC Upsilon^{-1} / n`, ignoring first-stage estimation.
    pub naive: DMatrix<f64>,
    pub upsilon: DMatrix<f64>,
    pub psi: DMatrix<f64>,
}

/// Two-step sandwich for one arm.
///
/// `dw_gamma` holds row `i` = `gamma' dW_i/dtheta` (`n x dim(theta)`) and
/// `info` is the mean outer product of first-stage scores. Setting
/// `dw_gamma` to zero yields the plain HC0 sandwich.
pub fn corrected_vcov(
    w: &DMatrix<f64>,
    residuals: &[f64],
    in_arm: &[bool],
    dw_gamma: &DMatrix<f64>,
    info: &DMatrix<f64>,
    dof_adjust: bool,
) -> Result<ArmVariance> {
    let n = w.nrows();
    let p = w.ncols();
    let nf = n as f64;
    let mut upsilon = DMatrix::zeros(p, p);
    let mut hc = DMatrix::zeros(p, p);
    let mut jmat = DMatrix::zeros(p, dw_gamma.ncols());
    let mut n_arm = 0usize;
    for i in 0..n {
        if !in_arm[i] {
            continue;
        }
        n_arm += 1;
        let wi = w.row(i).transpose();
        let outer = &wi * wi.transpose();
        hc += &outer * (residuals[i] * residuals[i]);
        upsilon += outer;
        jmat += &wi * dw_gamma.row(i);
    }
    upsilon /= nf;
    hc /= nf;
    jmat /= nf;
    if dof_adjust && n_arm > p {
        hc *= n_arm as f64 / (n_arm - p) as f64;
    }
    let ups_inv = spd_inverse(&upsilon, "second-stage moment matrix")?;
    let naive = crate::linalg::symmetrize(&(&ups_inv * &hc * &ups_inv / nf));
    // The generated-regressor term is added in Gram form B B' so that
    // corrected - naive stays positive semi-definite in floating point.
    let (psi, corrected) = if dw_gamma.ncols() > 0 {
        let chol = info
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("first-stage information matrix".into()))?;
        // J L'^{-1} = (L^{-1} J')'
        let jl = chol
            .l()
            .solve_lower_triangular(&jmat.transpose())
            .ok_or_else(|| Error::Singular("first-stage information matrix".into()))?
            .transpose();
        let b = &ups_inv * &jl;
        let psi = &hc + &jl * jl.transpose();
        (psi, &naive + &b * b.transpose() / nf)
    } else {
        (hc.clone(), naive.clone())
    };
    Ok(ArmVariance {
        corrected,
        naive,
        upsilon,
        psi,
    })
}

/// Rows `gamma' dW_i/dtheta` by the chain rule through `sigma_i` and `pi_i`.
///
/// `dsigma` is the `n x p` equilibrium Jacobian over the estimated
/// coordinates; clamped probabilities contribute no derivative through the
/// Mills ratios.
pub fn gamma_dw_dtheta(
    x: &DMatrix<f64>,
    sigma: &[f64],
    pi: &[f64],
    d: &[bool],
    dsigma: &DMatrix<f64>,
    dpi: &DMatrix<f64>,
    gamma: &OutcomeParams,
) -> DMatrix<f64> {
    let n = x.nrows();
    let k = x.ncols();
    let order = gamma.order;
    let g = gamma.as_vector();
    let beta = gamma.beta();
    let rho_u = g[k];
    let rho_e = g[2 * k + order];
    let (rho_u2, rho_e2) = if order == 2 {
        (g[k + 1], g[2 * k + order + 1])
    } else {
        (0.0, 0.0)
    };
    let mut out = DMatrix::zeros(n, dsigma.ncols());
    for i in 0..n {
        let raw = sigma[i];
        let s = normal::clamp_prob(raw, MILLS_CLAMP);
        let (lin, quad) = control_terms(s, d[i]);
        let (dlin, dquad) = if s == raw { control_terms_deriv(s, d[i]) } else { (0.0, 0.0) };
        let xb: f64 = (0..k).map(|j| x[(i, j)] * beta[j]).sum();
        // d(W'gamma) = [rho_u + rho_e pi] dlambda + [rho_u2 + rho_e2 pi] dquad
        //            + [x'beta + rho_e lambda + rho_e2 quad] dpi
        let via_sigma = (rho_u + rho_e * pi[i]) * dlin + (rho_u2 + rho_e2 * pi[i]) * dquad;
        let via_pi = xb + rho_e * lin + rho_e2 * quad;
        for c in 0..dsigma.ncols() {
            out[(i, c)] = via_sigma * dsigma[(i, c)] + via_pi * dpi[(i, c)];
        }
    }
    out
}

/// Fitted second stage with both variance estimates.
#[derive(Debug, Clone)]
pub struct SecondStageFit {
    pub gamma1: OutcomeParams,
    pub gamma0: OutcomeParams,
    pub vcov1: DMatrix<f64>,
    pub vcov0: DMatrix<f64>,
    pub naive_vcov1: DMatrix<f64>,
    pub naive_vcov0: DMatrix<f64>,
    pub residuals: Vec<f64>,
    pub w: DMatrix<f64>,
    /// Probabilities clamped before the Mills ratios.
    pub clamp_events: usize,
    /// Per-agent `E[Y_i | S]` at the estimation equilibrium, mixing both arms' conditional means.
    pub fitted_conditional_means: Vec<f64>,
}

impl SecondStageFit {
    pub fn gamma(&self, treated: bool) -> &OutcomeParams {
        if treated {
            &self.gamma1
        } else {
            &self.gamma0
        }
    }

    pub fn vcov(&self, treated: bool) -> &DMatrix<f64> {
        if treated {
            &self.vcov1
        } else {
            &self.vcov0
        }
    }

    pub fn naive_vcov(&self, treated: bool) -> &DMatrix<f64> {
        if treated {
            &self.naive_vcov1
        } else {
            &self.naive_vcov0
        }
    }

    pub fn std_errors(&self, treated: bool) -> Vec<f64> {
        let v = self.vcov(treated);
        (0..v.nrows()).map(|i| v[(i, i)].max(0.0).sqrt()).collect()
    }

    pub fn naive_std_errors(&self, treated: bool) -> Vec<f64> {
        let v = self.naive_vcov(treated);
        (0..v.nrows()).map(|i| v[(i, i)].max(0.0).sqrt()).collect()
    }

    pub fn mean_fitted(&self) -> f64 {
        self.fitted_conditional_means.iter().sum::<f64>() / self.fitted_conditional_means.len() as f64
    }
}

/// `E[Y_i | S] = sigma_i W_i^{(1)}'gamma_1 + (1 - sigma_i) W_i^{(0)}'gamma_0` per agent.
pub fn conditional_mean_mixture(
    x: &DMatrix<f64>,
    sigma: &[f64],
    pi: &[f64],
    gamma1: &OutcomeParams,
    gamma0: &OutcomeParams,
) -> Result<Vec<f64>> {
    let w1 = arm_design(x, sigma, pi, true, gamma1.order)?;
    let w0 = arm_design(x, sigma, pi, false, gamma0.order)?;
    let m1 = &w1 * gamma1.as_vector();
    let m0 = &w0 * gamma0.as_vector();
    Ok((0..x.nrows())
        .map(|i| sigma[i] * m1[i] + (1.0 - sigma[i]) * m0[i])
        .collect())
}

/// Second stage on top of a fitted first stage: generated regressors, arm regressions and corrected variances.
pub fn estimate_second_stage(
    s: &PublicState,
    d: &[bool],
    y: &[f64],
    first: &FirstStageFit,
    cfg: &SecondStageConfig,
) -> Result<SecondStageFit> {
    if y.len() != s.n() || d.len() != s.n() {
        return Err(Error::Validation("outcome or choice length differs from n".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite outcome".into()));
    }
    let eq = &first.equilibrium;
    let regs = build_regressors(s.x(), &eq.sigma, &eq.pi, d, cfg.cf_order)?;
    let point = fit_second_stage(y, d, &regs.w, s.k(), cfg.cf_order)?;

    let dsigma = first.grad_sigma.columns(0, first.dim()).into_owned();
    let dpi = neighbor_average_rows(&dsigma, s.network());
    let info = first.information();

    let arm = |treated: bool| -> Result<ArmVariance> {
        let gamma = if treated { &point.gamma1 } else { &point.gamma0 };
        let h = gamma_dw_dtheta(s.x(), &eq.sigma, &eq.pi, d, &dsigma, &dpi, gamma);
        let in_arm: Vec<bool> = d.iter().map(|&di| di == treated).collect();
        corrected_vcov(&regs.w, &point.residuals, &in_arm, &h, &info, cfg.dof_adjust)
    };
    let v1 = arm(true)?;
    let v0 = arm(false)?;
    let fitted = conditional_mean_mixture(s.x(), &eq.sigma, &eq.pi, &point.gamma1, &point.gamma0)?;

    Ok(SecondStageFit {
        gamma1: point.gamma1,
        gamma0: point.gamma0,
        vcov1: v1.corrected,
        vcov0: v0.corrected,
        naive_vcov1: v1.naive,
        naive_vcov0: v0.naive,
        residuals: point.residuals,
        w: regs.w,
        clamp_events: regs.clamped,
        fitted_conditional_means: fitted,
    })
}
