//! Nested-fixed-point maximum likelihood for the treatment-choice game.
//!
//! Every likelihood evaluation re-solves the equilibrium at the trial
//! parameter. Newton steps use the outer product of scores in place of the
//! Hessian, with step halving until the likelihood does not decrease.

use nalgebra::{DMatrix, DVector};

use crate::equilibrium::{
    grad_sigma, solve_equilibrium, Equilibrium, GameParams, PublicState, SolverConfig, GRAD_EPS,
};
use crate::error::{Error, Result};
use crate::linalg::{mean_outer, reciprocal_condition, spd_inverse, RANK_RCOND};
use crate::normal;

#[derive(Debug, Clone)]
pub struct FirstStageConfig {
    pub solver: SolverConfig,
    /// Forward-difference step for the equilibrium Jacobian.
    pub grad_eps: f64,
    pub max_newton: usize,
    /// Convergence requires the Newton step below this in sup norm...
    pub step_tol: f64,
    /// ...and the mean score below this in sup norm.
    pub score_tol: f64,
    /// Keep every trial parameter strictly inside `lambda < lambda_cap`.
    pub unique_mode: bool,
    pub lambda_cap: f64,
    /// Fix `theta3 = 0` and drop it from the parameter vector (plain probit).
    pub exclude_spillover: bool,
    /// Start here instead of at the probit fit.
    pub start: Option<GameParams>,
}

impl Default for FirstStageConfig {
    fn default() -> Self {
        FirstStageConfig {
            solver: SolverConfig::default(),
            grad_eps: GRAD_EPS,
            max_newton: 200,
            step_tol: 1e-8,
            score_tol: 1e-6,
            unique_mode: true,
            lambda_cap: 0.999,
            exclude_spillover: false,
            start: None,
        }
    }
}

/// Fitted first stage.
#[derive(Debug, Clone)]
pub struct FirstStageFit {
    pub theta_hat: GameParams,
    /// `I_n^{-1} / n` over the free parameters.
    pub vcov: DMatrix<f64>,
    /// Mean per-agent log-likelihood.
    pub loglik: f64,
    /// Per-agent score contributions at `theta_hat`, `n x dim`.
    pub score_rows: DMatrix<f64>,
    pub converged: bool,
    pub newton_iters: usize,
    /// The uniqueness cap shortened at least one step.
    pub lambda_bound_hit: bool,
    pub equilibrium: Equilibrium,
    /// Equilibrium Jacobian at `theta_hat`, `n x (k + 2)` (all coordinates, even when `theta3` is fixed).
    pub grad_sigma: DMatrix<f64>,
    /// Whether `theta3` was estimated.
    pub spillover_free: bool,
}

impl FirstStageFit {
    /// Number of estimated parameters.
    pub fn dim(&self) -> usize {
        self.vcov.nrows()
    }

    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.vcov[(i, i)].max(0.0).sqrt()).collect()
    }

    /// Mean outer product of the score rows.
    pub fn information(&self) -> DMatrix<f64> {
        mean_outer(&self.score_rows)
    }

    pub fn lambda_hat(&self) -> f64 {
        self.theta_hat.lambda()
    }
}

fn check_choices(s: &PublicState, d: &[bool]) -> Result<()> {
    if d.len() != s.n() {
        return Err(Error::Validation(format!(
            "choice vector has {} entries for {} agents",
            d.len(),
            s.n()
        )));
    }
    Ok(())
}

/// Mean log-likelihood of choices given equilibrium probabilities.
pub fn loglik_from_sigma(d: &[bool], sigma: &[f64]) -> f64 {
    let total: f64 = d
        .iter()
        .zip(sigma)
        .map(|(&di, &s)| {
            let s = normal::clamp_prob(s, normal::LOG_CLAMP);
            if di {
                s.ln()
            } else {
                (1.0 - s).ln()
            }
        })
        .sum();
    total / d.len() as f64
}

/// `(1/n) sum_i [D_i ln sigma_i + (1 - D_i) ln(1 - sigma_i)]` at the equilibrium for `theta`.
pub fn loglik(s: &PublicState, d: &[bool], theta: &GameParams, cfg: &SolverConfig) -> Result<f64> {
    check_choices(s, d)?;
    let eq = solve_equilibrium(s, theta, cfg)?;
    Ok(loglik_from_sigma(d, &eq.sigma))
}

/// Score rows `D_i g_i / sigma_i - (1 - D_i) g_i / (1 - sigma_i)` for Jacobian rows `g_i`.
pub fn score_rows_from(d: &[bool], sigma: &[f64], jac: &DMatrix<f64>) -> DMatrix<f64> {
    let mut rows = jac.clone();
    for (i, (&di, &s)) in d.iter().zip(sigma).enumerate() {
        let s = normal::clamp_prob(s, normal::LOG_CLAMP);
        let w = if di { 1.0 / s } else { -1.0 / (1.0 - s) };
        for c in 0..rows.ncols() {
            rows[(i, c)] *= w;
        }
    }
    rows
}

/// Per-agent score contributions at `theta`, `n x dim(theta)`.
pub fn score(s: &PublicState, d: &[bool], theta: &GameParams, cfg: &SolverConfig) -> Result<DMatrix<f64>> {
    check_choices(s, d)?;
    let eq = solve_equilibrium(s, theta, cfg)?;
    let jac = grad_sigma(s, theta, &eq, GRAD_EPS, cfg)?;
    Ok(score_rows_from(d, &eq.sigma, &jac))
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows().max(1) as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

/// Probit maximum likelihood of `d` on the columns of `r` by Newton-Raphson with the analytic Hessian.
pub fn fit_probit(r: &DMatrix<f64>, d: &[bool], max_iter: usize, tol: f64) -> Result<DVector<f64>> {
    let p = r.ncols();
    let mut beta = DVector::zeros(p);
    for _ in 0..max_iter {
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        for i in 0..r.nrows() {
            let row = r.row(i).transpose();
            let xb = row.dot(&beta);
            // Mills-type weights; q = 2D - 1 gives the symmetric form.
            let q = if d[i] { 1.0 } else { -1.0 };
            let m = q * xb;
            let ratio = q * mills_ratio(m);
            grad += &row * ratio;
            hess -= &row * row.transpose() * (ratio * (ratio + xb));
        }
        let step = (-hess)
            .cholesky()
            .ok_or_else(|| Error::Identification("probit Hessian not negative definite".into()))?
            .solve(&grad);
        let max_step = step.amax();
        beta += step;
        if max_step < tol {
            return Ok(beta);
        }
    }
    Err(Error::OptimizerFailed {
        iterations: max_iter,
        trace: "probit starting values".into(),
    })
}

/// `phi(m) / Phi(m)` computed stably for large negative `m`.
fn mills_ratio(m: f64) -> f64 {
    if m < -30.0 {
        // Asymptotic expansion of the ratio in the far tail.
        let m2 = m * m;
        -m / (1.0 - 1.0 / m2 + 3.0 / (m2 * m2))
    } else {
        normal::pdf(m) / normal::cdf(m)
    }
}

/// `R_i = (X_i, Z_i, pi_i)` stacked as rows.
pub fn regressor_matrix(s: &PublicState, pi: Option<&[f64]>) -> DMatrix<f64> {
    let k = s.k();
    let cols = k + 1 + usize::from(pi.is_some());
    DMatrix::from_fn(s.n(), cols, |i, c| {
        if c < k {
            s.x()[(i, c)]
        } else if c == k {
            if s.z()[i] {
                1.0
            } else {
                0.0
            }
        } else {
            pi.map_or(0.0, |p| p[i])
        }
    })
}

struct Objective<'a> {
    s: &'a PublicState,
    d: &'a [bool],
    cfg: &'a FirstStageConfig,
}

impl Objective<'_> {
    fn params(&self, free: &DVector<f64>) -> GameParams {
        if self.cfg.exclude_spillover {
            let mut v = free.as_slice().to_vec();
            v.push(0.0);
            GameParams::from_slice(&v).expect("dimension")
        } else {
            GameParams::from_slice(free.as_slice()).expect("dimension")
        }
    }

    fn eval(&self, free: &DVector<f64>) -> Result<(Equilibrium, f64)> {
        let eq = solve_equilibrium(self.s, &self.params(free), &self.cfg.solver)?;
        let ll = loglik_from_sigma(self.d, &eq.sigma);
        Ok((eq, ll))
    }

    /// Full equilibrium Jacobian and the score rows restricted to the free coordinates.
    fn scores(&self, free: &DVector<f64>, eq: &Equilibrium) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let theta = self.params(free);
        let jac = if self.cfg.exclude_spillover {
            let partial = grad_free_only(self.s, &theta, eq, self.cfg)?;
            let mut full = DMatrix::zeros(self.s.n(), theta.dim());
            full.columns_mut(0, partial.ncols()).copy_from(&partial);
            full
        } else {
            grad_sigma(self.s, &theta, eq, self.cfg.grad_eps, &self.cfg.solver)?
        };
        let free_jac = jac.columns(0, free.len()).into_owned();
        Ok((jac, score_rows_from(self.d, &eq.sigma, &free_jac)))
    }

    fn lambda_ok(&self, free: &DVector<f64>) -> bool {
        !self.cfg.unique_mode || self.cfg.exclude_spillover || self.params(free).lambda() < self.cfg.lambda_cap
    }
}

fn grad_free_only(
    s: &PublicState,
    theta: &GameParams,
    eq: &Equilibrium,
    cfg: &FirstStageConfig,
) -> Result<DMatrix<f64>> {
    let free = theta.dim() - 1;
    let mut jac = DMatrix::zeros(s.n(), free);
    for k in 0..free {
        let bumped = solve_equilibrium(s, &theta.perturbed(k, cfg.grad_eps), &cfg.solver)?;
        for i in 0..s.n() {
            jac[(i, k)] = (bumped.sigma[i] - eq.sigma[i]) / cfg.grad_eps;
        }
    }
    Ok(jac)
}

/// Maximize the nested-fixed-point likelihood and compute information-matrix standard errors.
pub fn fit_first_stage(s: &PublicState, d: &[bool], cfg: &FirstStageConfig) -> Result<FirstStageFit> {
    check_choices(s, d)?;
    let obj = Objective { s, d, cfg };

    let mut free = match &cfg.start {
        Some(t) => {
            let v = t.to_vector();
            if cfg.exclude_spillover {
                v.rows(0, v.len() - 1).into_owned()
            } else {
                v
            }
        }
        None => {
            let r = regressor_matrix(s, None);
            let beta = fit_probit(&r, d, 100, 1e-10)?;
            if cfg.exclude_spillover {
                beta
            } else {
                beta.push(0.0)
            }
        }
    };
    if !obj.lambda_ok(&free) {
        return Err(Error::Validation("starting value violates the uniqueness cap".into()));
    }

    let (mut eq, mut ll) = obj.eval(&free)?;
    let rank_r = regressor_matrix(s, if cfg.exclude_spillover { None } else { Some(&eq.pi) });
    if reciprocal_condition(&(rank_r.transpose() * &rank_r)) < RANK_RCOND {
        return Err(Error::Identification("moment matrix of (X, Z, pi) is rank deficient".into()));
    }

    let n = s.n() as f64;
    let spill = cfg.unique_mode && !cfg.exclude_spillover;
    let last = free.len() - 1;
    let theta3_cap = cfg.lambda_cap / normal::INV_SQRT_2PI;
    let mut bound_hit = false;
    let mut last_step = f64::INFINITY;
    let mut trace = Vec::new();
    for iter in 0..cfg.max_newton {
        let (jac, rows) = obj.scores(&free, &eq)?;
        let gbar = column_means(&rows);
        let info = mean_outer(&rows);
        let info_inv = spd_inverse(&info, "outer product of scores").map_err(|_| {
            Error::Identification("information matrix is singular".into())
        })?;
        let mut step = &info_inv * &gbar;
        // On the uniqueness boundary with the step pointing outward, move
        // only along the face (theta3 held fixed).
        let on_face = spill
            && theta3_cap - free[last].abs() <= BOUNDARY_FACE * theta3_cap
            && step[last] * free[last] > 0.0;
        let grad_check = if on_face {
            bound_hit = true;
            let inner = spd_inverse(&info.view((0, 0), (last, last)).into_owned(), "outer product of scores")
                .map_err(|_| Error::Identification("information matrix is singular".into()))?;
            let reduced = inner * gbar.rows(0, last);
            step = reduced.push(0.0);
            gbar.rows(0, last).amax()
        } else {
            gbar.amax()
        };
        let gain = gbar.dot(&step);
        let resolution = loglik_resolution(d, &eq.sigma, cfg.solver.tol);
        trace.push(format!(
            "it={iter} ll={ll:.12} |g|={grad_check:.3e} |step|={:.3e} gain={gain:.3e}",
            step.amax()
        ));

        let done = |rows: DMatrix<f64>, eq: Equilibrium, free: &DVector<f64>, ll: f64, bound_hit: bool| FirstStageFit {
            theta_hat: obj.params(free),
            vcov: info_inv.clone() / n,
            loglik: ll,
            score_rows: rows,
            converged: true,
            newton_iters: iter,
            lambda_bound_hit: bound_hit,
            equilibrium: eq,
            grad_sigma: jac.clone(),
            spillover_free: !cfg.exclude_spillover,
        };
        // Either the last accepted move was negligible, or the best predicted
        // improvement is below the accuracy with which the likelihood is known.
        if grad_check <= cfg.score_tol && (last_step <= cfg.step_tol || gain <= resolution) {
            return Ok(done(rows, eq, &free, ll, bound_hit));
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &free + &step * t;
            if !obj.lambda_ok(&trial) {
                bound_hit = true;
                t *= 0.5;
                continue;
            }
            match obj.eval(&trial) {
                Ok((teq, tll)) if tll >= ll => {
                    accepted = Some((trial, teq, tll));
                    break;
                }
                _ => t *= 0.5,
            }
        }
        match accepted {
            Some((trial, teq, tll)) => {
                last_step = (&trial - &free).amax();
                free = trial;
                eq = teq;
                ll = tll;
            }
            None => {
                // No ascent along the direction: numerically at the maximum.
                if grad_check <= cfg.score_tol {
                    return Ok(done(rows, eq, &free, ll, bound_hit));
                }
                return Err(Error::OptimizerFailed {
                    iterations: iter,
                    trace: trace.into_iter().rev().take(5).collect::<Vec<_>>().join("; "),
                });
            }
        }
    }
    Err(Error::OptimizerFailed {
        iterations: cfg.max_newton,
        trace: trace.into_iter().rev().take(5).collect::<Vec<_>>().join("; "),
    })
}

/// First-stage quantities at a given parameter without optimizing, e.g. to
/// rebuild the information matrix from a saved estimate.
pub fn evaluate_first_stage(
    s: &PublicState,
    d: &[bool],
    theta: &GameParams,
    cfg: &FirstStageConfig,
) -> Result<FirstStageFit> {
    check_choices(s, d)?;
    if theta.theta1.len() != s.k() {
        return Err(Error::Validation(format!(
            "parameter has {} covariate coefficients, data has {}",
            theta.theta1.len(),
            s.k()
        )));
    }
    if cfg.exclude_spillover && theta.theta3 != 0.0 {
        return Err(Error::Validation("theta3 must be 0 when the spillover term is excluded".into()));
    }
    let obj = Objective { s, d, cfg };
    let v = theta.to_vector();
    let free = if cfg.exclude_spillover {
        v.rows(0, v.len() - 1).into_owned()
    } else {
        v
    };
    let (eq, ll) = obj.eval(&free)?;
    let (jac, rows) = obj.scores(&free, &eq)?;
    let info = mean_outer(&rows);
    let info_inv = spd_inverse(&info, "outer product of scores")
        .map_err(|_| Error::Identification("information matrix is singular".into()))?;
    let converged = column_means(&rows).amax() <= cfg.score_tol;
    Ok(FirstStageFit {
        theta_hat: theta.clone(),
        vcov: info_inv / s.n() as f64,
        loglik: ll,
        score_rows: rows,
        converged,
        newton_iters: 0,
        lambda_bound_hit: false,
        equilibrium: eq,
        grad_sigma: jac,
        spillover_free: !cfg.exclude_spillover,
    })
}

/// Relative distance to the `theta3` cap within which the cap counts as active.
const BOUNDARY_FACE: f64 = 1e-6;

/// Bound on the mean log-likelihood error implied by solving the equilibrium to `tol`.
fn loglik_resolution(d: &[bool], sigma: &[f64], tol: f64) -> f64 {
    let total: f64 = d
        .iter()
        .zip(sigma)
        .map(|(&di, &p)| {
            let p = normal::clamp_prob(p, normal::LOG_CLAMP);
            if di {
                1.0 / p
            } else {
                1.0 / (1.0 - p)
            }
        })
        .sum();
    tol * total / d.len() as f64
}
