//! Bayes-Nash equilibrium of the treatment-choice game.
//!
//! Each agent takes up treatment with probability
//! `sigma_i = Phi(X_i'theta1 + theta2 Z_i + theta3 pi_i)` where `pi_i` is the
//! average of `sigma_j` over the agent's neighbors. The map is a contraction
//! with modulus `|theta3| / sqrt(2 pi)` in the sup norm, so plain iteration
//! converges whenever that modulus is below one.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::network::Network;
use crate::normal;

/// First-stage parameters: covariate coefficients, assignment effect, spillover coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct GameParams {
    pub theta1: Vec<f64>,
    pub theta2: f64,
    pub theta3: f64,
}

impl GameParams {
    pub fn new(theta1: Vec<f64>, theta2: f64, theta3: f64) -> Self {
        GameParams {
            theta1,
            theta2,
            theta3,
        }
    }

    /// Number of free parameters, `k + 2`.
    pub fn dim(&self) -> usize {
        self.theta1.len() + 2
    }

    /// Stacked as `(theta1, theta2, theta3)`.
    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = self.theta1.clone();
        v.push(self.theta2);
        v.push(self.theta3);
        DVector::from_vec(v)
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() < 3 {
            return Err(Error::Validation(format!(
                "parameter vector needs at least 3 entries, got {}",
                values.len()
            )));
        }
        let k = values.len() - 2;
        Ok(GameParams::new(values[..k].to_vec(), values[k], values[k + 1]))
    }

    /// Copy with coordinate `idx` of the stacked vector shifted by `delta`.
    pub fn perturbed(&self, idx: usize, delta: f64) -> Self {
        let mut v = self.to_vector();
        v[idx] += delta;
        GameParams::from_slice(v.as_slice()).expect("same dimension")
    }

    /// Contraction modulus `lambda = |theta3| sup phi`.
    pub fn lambda(&self) -> f64 {
        self.theta3.abs() * normal::INV_SQRT_2PI
    }

    /// Stacked parameter names, `theta1[<covariate>]`, `theta2`, `theta3`.
    pub fn names(&self, covariates: &[String]) -> Vec<String> {
        let mut names: Vec<String> = (0..self.theta1.len())
            .map(|j| match covariates.get(j) {
                Some(c) => format!("theta1[{c}]"),
                None => format!("theta1[{j}]"),
            })
            .collect();
        names.push("theta2".into());
        names.push("theta3".into());
        names
    }
}

/// Uniqueness margin `lambda = |theta3| / sqrt(2 pi)` and whether `lambda < 1`.
pub fn uniqueness_margin(theta: &GameParams) -> (f64, bool) {
    let lambda = theta.lambda();
    (lambda, lambda < 1.0)
}

/// Public information: network, covariates and randomized assignment.
#[derive(Debug, Clone)]
pub struct PublicState {
    net: Network,
    x: DMatrix<f64>,
    z: Vec<bool>,
    covariate_names: Vec<String>,
}

impl PublicState {
    pub fn new(net: Network, x: DMatrix<f64>, z: Vec<bool>, covariate_names: Vec<String>) -> Result<Self> {
        let n = net.n();
        if x.nrows() != n || z.len() != n {
            return Err(Error::Validation(format!(
                "row counts disagree: network {n}, covariates {}, assignment {}",
                x.nrows(),
                z.len()
            )));
        }
        if covariate_names.len() != x.ncols() {
            return Err(Error::Validation(format!(
                "{} covariate names for {} columns",
                covariate_names.len(),
                x.ncols()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite covariate value".into()));
        }
        Ok(PublicState {
            net,
            x,
            z,
            covariate_names,
        })
    }

    /// Intercept-only covariates, the design used in the simulation study.
    pub fn intercept_only(net: Network, z: Vec<bool>) -> Result<Self> {
        let n = net.n();
        PublicState::new(net, DMatrix::from_element(n, 1, 1.0), z, vec!["const".into()])
    }

    pub fn n(&self) -> usize {
        self.net.n()
    }

    /// Number of covariate columns.
    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &[bool] {
        &self.z
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    /// Same network and covariates with a new assignment vector.
    pub fn with_assignment(&self, z: Vec<bool>) -> Result<Self> {
        PublicState::new(self.net.clone(), self.x.clone(), z, self.covariate_names.clone())
    }

    /// Relabel agents: agent `i` becomes `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        let mut inv = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let x = DMatrix::from_fn(n, self.k(), |r, c| self.x[(inv[r], c)]);
        let z = (0..n).map(|r| self.z[inv[r]]).collect();
        PublicState::new(self.net.permute(perm)?, x, z, self.covariate_names.clone())
    }

    /// `X_i'theta1 + theta2 Z_i`, the part of the index that does not depend on beliefs.
    pub fn base_index(&self, theta: &GameParams) -> Result<Vec<f64>> {
        if theta.theta1.len() != self.k() {
            return Err(Error::Validation(format!(
                "theta1 has {} entries for {} covariates",
                theta.theta1.len(),
                self.k()
            )));
        }
        Ok((0..self.n())
            .map(|i| {
                let xb: f64 = (0..self.k()).map(|j| self.x[(i, j)] * theta.theta1[j]).sum();
                xb + if self.z[i] { theta.theta2 } else { 0.0 }
            })
            .collect())
    }
}

/// Solved equilibrium choice probabilities and neighborhood scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub sigma: Vec<f64>,
    pub pi: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm change between the last two iterates.
    pub residual: f64,
    /// Solved with `lambda >= 1` under the override flag.
    pub non_unique_regime: bool,
}

impl Equilibrium {
    pub fn mean_sigma(&self) -> f64 {
        mean(&self.sigma)
    }

    pub fn mean_pi(&self) -> f64 {
        mean(&self.pi)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Solve even when `lambda >= 1`; the reported fixed point is whichever
    /// one iteration from `sigma = 0.5` reaches.
    pub allow_nonunique: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-12,
            max_iter: 10_000,
            allow_nonunique: false,
        }
    }
}

/// Initial iterate for every agent.
pub const SIGMA_START: f64 = 0.5;

/// Default forward-difference step for `grad_sigma`.
pub const GRAD_EPS: f64 = 1e-5;

/// `pi_i` = mean of `sigma_j` over the neighbors of `i`.
pub fn neighborhood_score(sigma: &[f64], net: &Network) -> Result<Vec<f64>> {
    if sigma.len() != net.n() {
        return Err(Error::Validation(format!(
            "sigma has {} entries for {} agents",
            sigma.len(),
            net.n()
        )));
    }
    (0..net.n())
        .map(|i| {
            let nb = net.neighbors(i);
            if nb.is_empty() {
                return Err(Error::Validation(format!(
                    "agent {i} has no neighbors; remove isolated nodes first"
                )));
            }
            Ok(nb.iter().map(|&j| sigma[j]).sum::<f64>() / nb.len() as f64)
        })
        .collect()
}

fn neighbor_mean_into(sigma: &[f64], net: &Network, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let nb = net.neighbors(i);
        *o = nb.iter().map(|&j| sigma[j]).sum::<f64>() / nb.len() as f64;
    }
}

/// Solve the fixed point `sigma = Phi(base + theta3 * pi(sigma))`.
pub fn solve_equilibrium(s: &PublicState, theta: &GameParams, cfg: &SolverConfig) -> Result<Equilibrium> {
    solve_inner(s, theta, cfg, None)
}

/// As [`solve_equilibrium`], also returning every iterate starting with the initial one.
pub fn solve_equilibrium_traced(
    s: &PublicState,
    theta: &GameParams,
    cfg: &SolverConfig,
) -> Result<(Equilibrium, Vec<Vec<f64>>)> {
    let mut trace = Vec::new();
    let eq = solve_inner(s, theta, cfg, Some(&mut trace))?;
    Ok((eq, trace))
}

fn solve_inner(
    s: &PublicState,
    theta: &GameParams,
    cfg: &SolverConfig,
    mut trace: Option<&mut Vec<Vec<f64>>>,
) -> Result<Equilibrium> {
    if !(cfg.tol > 0.0) {
        return Err(Error::Validation(format!("tolerance must be positive, got {}", cfg.tol)));
    }
    let (lambda, unique) = uniqueness_margin(theta);
    if !unique && !cfg.allow_nonunique {
        return Err(Error::NotUnique { lambda });
    }
    let net = s.network();
    if let Some(i) = net.isolated().first() {
        return Err(Error::Validation(format!(
            "agent {i} has no neighbors; remove isolated nodes first"
        )));
    }
    let base = s.base_index(theta)?;
    let n = s.n();

    if theta.theta3 == 0.0 {
        let sigma: Vec<f64> = base.iter().map(|&b| normal::cdf(b)).collect();
        if let Some(t) = trace.as_deref_mut() {
            t.push(vec![SIGMA_START; n]);
            t.push(sigma.clone());
        }
        let pi = neighborhood_score(&sigma, net)?;
        return Ok(Equilibrium {
            sigma,
            pi,
            iterations: 1,
            residual: 0.0,
            non_unique_regime: false,
        });
    }

    let mut sigma = vec![SIGMA_START; n];
    let mut next = vec![0.0; n];
    let mut pi = vec![0.0; n];
    if let Some(t) = trace.as_deref_mut() {
        t.push(sigma.clone());
    }
    let mut residual = f64::INFINITY;
    for iter in 1..=cfg.max_iter {
        neighbor_mean_into(&sigma, net, &mut pi);
        residual = 0.0;
        for i in 0..n {
            next[i] = normal::cdf(base[i] + theta.theta3 * pi[i]);
            residual = residual.max((next[i] - sigma[i]).abs());
        }
        std::mem::swap(&mut sigma, &mut next);
        if let Some(t) = trace.as_deref_mut() {
            t.push(sigma.clone());
        }
        if residual <= cfg.tol {
            neighbor_mean_into(&sigma, net, &mut pi);
            return Ok(Equilibrium {
                sigma,
                pi,
                iterations: iter,
                residual,
                non_unique_regime: !unique,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: cfg.max_iter,
        residual,
    })
}

/// Sup-norm defect `max_i |Phi(base_i + theta3 pi_i(sigma)) - sigma_i|` of a candidate profile.
pub fn fixed_point_defect(s: &PublicState, theta: &GameParams, sigma: &[f64]) -> Result<f64> {
    let base = s.base_index(theta)?;
    let pi = neighborhood_score(sigma, s.network())?;
    Ok(base
        .iter()
        .zip(&pi)
        .zip(sigma)
        .map(|((b, p), s)| (normal::cdf(b + theta.theta3 * p) - s).abs())
        .fold(0.0, f64::max))
}

/// Forward-difference Jacobian of the equilibrium probabilities, `n x dim(theta)`.
///
/// Column `k` is `(sigma*(theta + eps e_k) - sigma*(theta)) / eps`, each
/// perturbed equilibrium re-solved with the same solver settings.
pub fn grad_sigma(
    s: &PublicState,
    theta: &GameParams,
    base: &Equilibrium,
    eps: f64,
    cfg: &SolverConfig,
) -> Result<DMatrix<f64>> {
    if !(eps > 0.0) {
        return Err(Error::Validation(format!("step must be positive, got {eps}")));
    }
    let n = s.n();
    let mut jac = DMatrix::zeros(n, theta.dim());
    for k in 0..theta.dim() {
        let bumped = solve_equilibrium(s, &theta.perturbed(k, eps), cfg)?;
        for i in 0..n {
            jac[(i, k)] = (bumped.sigma[i] - base.sigma[i]) / eps;
        }
    }
    Ok(jac)
}

/// Neighbor averages of the rows of an `n x p` matrix (the Jacobian of `pi` given that of `sigma`).
pub fn neighbor_average_rows(m: &DMatrix<f64>, net: &Network) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let nb = net.neighbors(i);
        let w = 1.0 / nb.len() as f64;
        for &j in nb {
            for c in 0..m.ncols() {
                out[(i, c)] += w * m[(j, c)];
            }
        }
    }
    out
}
