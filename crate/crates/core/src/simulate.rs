//! Synthetic data from the random-coefficient design and the Monte Carlo harness.
//!
//! The public state (network, covariates, assignment) is drawn once and held
//! fixed; each replication draws fresh choice shocks and outcome
//! coefficients from its own ChaCha stream `(seed, replication)`, so results
//! do not depend on scheduling.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::equilibrium::{solve_equilibrium, Equilibrium, GameParams, PublicState};
use crate::error::{Error, Result};
use crate::firststage::{fit_first_stage, FirstStageConfig};
use crate::linalg::{least_squares, min_eigenvalue};
use crate::network::{build_radius_graph, remove_isolated, Coordinates, Network};
use crate::secondstage::{estimate_second_stage, OutcomeParams, SecondStageConfig};

/// Stream reserved for drawing the network.
const NETWORK_STREAM: u64 = u64::MAX;
/// Stream reserved for drawing assignment and covariates.
const STATE_STREAM: u64 = u64::MAX - 1;

/// Uniform points on a square sized for a target mean degree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricSpec {
    pub n_points: usize,
    pub radius: f64,
    pub target_degree: f64,
}

impl Default for GeometricSpec {
    fn default() -> Self {
        GeometricSpec {
            n_points: 538,
            radius: 500.0,
            target_degree: 16.0,
        }
    }
}

/// Expected degree of a point in a random geometric graph on `[0, side]^2`, boundary effects included.
pub fn expected_degree(n: usize, radius: f64, side: f64) -> f64 {
    let a = radius / side;
    // Probability that two uniform points on the unit square lie within distance a (a <= 1).
    let p = std::f64::consts::PI * a * a - 8.0 / 3.0 * a.powi(3) + 0.5 * a.powi(4);
    (n as f64 - 1.0) * p
}

/// Square side giving the target expected mean degree.
pub fn calibrate_side(spec: &GeometricSpec) -> Result<f64> {
    if spec.n_points < 2 || !(spec.target_degree > 0.0) || !(spec.radius > 0.0) {
        return Err(Error::Validation("geometric design needs n >= 2 and positive radius/degree".into()));
    }
    if spec.target_degree >= (spec.n_points - 1) as f64 * 0.9 {
        return Err(Error::Validation("target degree too large for n".into()));
    }
    // Degree decreases in the side; bisection over side in [radius, big].
    let (mut lo, mut hi) = (spec.radius, spec.radius * 1e4);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected_degree(spec.n_points, spec.radius, mid) > spec.target_degree {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Random geometric network with isolated agents removed.
#[derive(Debug, Clone)]
pub struct GeometricNetwork {
    pub network: Network,
    pub coords: Coordinates,
    /// Indices (into the generated points) of agents dropped as isolated.
    pub dropped: Vec<usize>,
}

pub fn generate_geometric_network(spec: &GeometricSpec, seed: u64) -> Result<GeometricNetwork> {
    let side = calibrate_side(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(NETWORK_STREAM);
    let pts: Vec<[f64; 2]> = (0..spec.n_points)
        .map(|_| [rng.random_range(0.0..side), rng.random_range(0.0..side)])
        .collect();
    let coords = Coordinates::new(pts)?;
    let raw = build_radius_graph(&coords, spec.radius)?;
    let removal = remove_isolated(&raw);
    Ok(GeometricNetwork {
        coords: coords.select(&removal.kept),
        network: removal.network,
        dropped: removal.dropped,
    })
}

/// How the fixed public state of a synthetic study is drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDesign {
    pub geometric: GeometricSpec,
    /// `P(Z_i = 1)`.
    pub assign_prob: f64,
    /// Add a normal `wealth` covariate with this `(mean, sd)` after the intercept.
    pub wealth: Option<(f64, f64)>,
}

impl Default for SyntheticDesign {
    fn default() -> Self {
        SyntheticDesign {
            geometric: GeometricSpec::default(),
            assign_prob: 0.27,
            wealth: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticState {
    pub state: PublicState,
    pub coords: Coordinates,
    pub dropped: Vec<usize>,
}

/// Generator for the fixed public state (assignment, covariates) under `seed`.
pub fn state_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STATE_STREAM);
    rng
}

/// Independent `Bernoulli(p)` assignment indicators.
pub fn draw_assignment(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<bool> {
    (0..n).map(|_| rng.random_bool(p)).collect()
}

/// Draw network, covariates and assignment once.
pub fn synthetic_state(design: &SyntheticDesign, seed: u64) -> Result<SyntheticState> {
    if !(0.0..=1.0).contains(&design.assign_prob) {
        return Err(Error::Validation("assignment probability outside [0, 1]".into()));
    }
    let geo = generate_geometric_network(&design.geometric, seed)?;
    let n = geo.network.n();
    let mut rng = state_rng(seed);
    let z = draw_assignment(&mut rng, n, design.assign_prob);
    let state = match design.wealth {
        None => PublicState::intercept_only(geo.network, z)?,
        Some((mean, sd)) => {
            let w: Vec<f64> = (0..n)
                .map(|_| mean + sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let x = DMatrix::from_fn(n, 2, |i, c| if c == 0 { 1.0 } else { w[i] });
            PublicState::new(geo.network, x, z, vec!["const".into(), "wealth".into()])?
        }
    };
    Ok(SyntheticState {
        state,
        coords: geo.coords,
        dropped: geo.dropped,
    })
}

/// Data-generating process for choices and outcomes given a fixed public state.
///
/// Unit coefficients are `X_i'mean + loading * v_i + noise_sd * xi` with
/// independent standard normal `xi`, for `(alpha1, beta1, alpha0, beta0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    pub theta0: GameParams,
    pub alpha1: Vec<f64>,
    pub beta1: Vec<f64>,
    pub alpha0: Vec<f64>,
    pub beta0: Vec<f64>,
    /// Loadings of `(alpha1, beta1, alpha0, beta0)` on the choice shock `v`.
    pub loadings: [f64; 4],
    pub noise_sd: f64,
    pub seed: u64,
}

impl DgpSpec {
    /// Intercept-only design with `theta = (-2, 1, 1.5)`, coefficient means
    /// `(2, 1, 4, 3)` and loadings `(0.3, 0.4, 0.2, 0.2)`.
    pub fn reference() -> Self {
        DgpSpec {
            theta0: GameParams::new(vec![-2.0], 1.0, 1.5),
            alpha1: vec![2.0],
            beta1: vec![1.0],
            alpha0: vec![4.0],
            beta0: vec![3.0],
            loadings: [0.3, 0.4, 0.2, 0.2],
            noise_sd: 1.0,
            seed: 20_240_601,
        }
    }

    pub fn validate(&self, s: &PublicState) -> Result<()> {
        let k = s.k();
        if self.theta0.theta1.len() != k
            || [&self.alpha1, &self.beta1, &self.alpha0, &self.beta0].iter().any(|v| v.len() != k)
        {
            return Err(Error::Validation(format!("DGP coefficient vectors must have {k} entries")));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::Validation("noise_sd must be nonnegative".into()));
        }
        Ok(())
    }

    /// True outcome parameters `(gamma1, gamma0)` of the linear control-function model.
    pub fn true_gammas(&self) -> Result<(OutcomeParams, OutcomeParams)> {
        let [la1, lb1, la0, lb0] = self.loadings;
        Ok((
            OutcomeParams::linear(&self.alpha1, la1, &self.beta1, lb1)?,
            OutcomeParams::linear(&self.alpha0, la0, &self.beta0, lb0)?,
        ))
    }

    /// All true parameters in the order used by [`McResult`] rows.
    pub fn truth_vector(&self) -> Result<Vec<f64>> {
        let (g1, g0) = self.true_gammas()?;
        let mut v: Vec<f64> = self.theta0.to_vector().iter().copied().collect();
        v.extend(g1.as_vector().iter());
        v.extend(g0.as_vector().iter());
        Ok(v)
    }
}

/// One simulated dataset.
#[derive(Debug, Clone)]
pub struct SimData {
    pub d: Vec<bool>,
    pub y: Vec<f64>,
    /// Choice shocks.
    pub v: Vec<f64>,
    /// Drawn `(alpha1, beta1, alpha0, beta0)` per agent.
    pub coefficients: Vec<[f64; 4]>,
}

/// Per-replication generator for `(seed, replication)`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Draw choices and outcomes at the true equilibrium `eq` of `(s, spec.theta0)`.
pub fn generate_data(s: &PublicState, eq: &Equilibrium, spec: &DgpSpec, rep: u64) -> Result<SimData> {
    spec.validate(s)?;
    let n = s.n();
    let base = s.base_index(&spec.theta0)?;
    let mut rng = replication_rng(spec.seed, rep);
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut d = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut coefficients = Vec::with_capacity(n);
    let means = [&spec.alpha1, &spec.beta1, &spec.alpha0, &spec.beta0];
    for i in 0..n {
        let xi = s.x().row(i);
        let mut c = [0.0; 4];
        for (m, slot) in c.iter_mut().enumerate() {
            let mean: f64 = means[m].iter().zip(xi.iter()).map(|(a, b)| a * b).sum();
            let noise: f64 = rng.sample(StandardNormal);
            *slot = mean + spec.loadings[m] * v[i] + spec.noise_sd * noise;
        }
        let treated = v[i] <= base[i] + spec.theta0.theta3 * eq.pi[i];
        let outcome = if treated {
            c[0] + c[1] * eq.pi[i]
        } else {
            c[2] + c[3] * eq.pi[i]
        };
        d.push(treated);
        y.push(outcome);
        coefficients.push(c);
    }
    Ok(SimData { d, y, v, coefficients })
}

/// Naive outcome-coefficient estimates `(alpha1, beta1, alpha0, beta0)` (each a k-vector, concatenated).
#[derive(Debug, Clone, PartialEq)]
pub struct ComparatorEstimates {
    pub ols: Vec<f64>,
    pub iv: Vec<f64>,
}

fn comparator_design(x: &DMatrix<f64>, pi: &[f64], indicator: &[bool]) -> DMatrix<f64> {
    let k = x.ncols();
    DMatrix::from_fn(x.nrows(), 4 * k, |i, c| {
        let j = c % k;
        let base = x[(i, j)];
        let ind = if indicator[i] { 1.0 } else { 0.0 };
        match c / k {
            0 => base,
            1 => pi[i] * base,
            2 => ind * base,
            _ => ind * pi[i] * base,
        }
    })
}

/// Map `(X, pi X, D X, D pi X)` coefficients to `(alpha1, beta1, alpha0, beta0)`.
fn implied_arm_coefficients(b: &DVector<f64>, k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(4 * k);
    out.extend((0..k).map(|j| b[j] + b[2 * k + j]));
    out.extend((0..k).map(|j| b[k + j] + b[3 * k + j]));
    out.extend((0..k).map(|j| b[j]));
    out.extend((0..k).map(|j| b[k + j]));
    out
}

/// OLS of `Y` on `(X, pi X, D X, D pi X)` and 2SLS instrumenting the `D` terms by the `Z` terms.
pub fn comparators(s: &PublicState, pi: &[f64], d: &[bool], y: &[f64]) -> Result<ComparatorEstimates> {
    let k = s.k();
    let design = comparator_design(s.x(), pi, d);
    let instruments = comparator_design(s.x(), pi, s.z());
    let yv = DVector::from_column_slice(y);
    let ols = least_squares(&design, &yv)
        .ok_or_else(|| Error::RankCondition("comparator OLS design is rank deficient".into()))?;
    // 2SLS: project the design on the instrument space, then regress.
    let mut projected = DMatrix::zeros(design.nrows(), design.ncols());
    for c in 0..design.ncols() {
        let col = design.column(c).into_owned();
        let coef = least_squares(&instruments, &col)
            .ok_or_else(|| Error::RankCondition("instrument matrix is rank deficient".into()))?;
        projected.set_column(c, &(&instruments * coef));
    }
    let iv = least_squares(&projected, &yv)
        .ok_or_else(|| Error::RankCondition("2SLS design is rank deficient".into()))?;
    if ols.iter().chain(iv.iter()).any(|v| !v.is_finite()) {
        return Err(Error::RankCondition("comparator estimates are not finite".into()));
    }
    Ok(ComparatorEstimates {
        ols: implied_arm_coefficients(&ols, k),
        iv: implied_arm_coefficients(&iv, k),
    })
}

/// Record of one successful replication.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub rep: u64,
    /// Estimates in [`McResult`] row order: theta, gamma1, gamma0.
    pub estimates: Vec<f64>,
    /// Reported standard errors (corrected for the outcome equations).
    pub std_errors: Vec<f64>,
    pub naive_std_errors: Vec<f64>,
    pub comparators: ComparatorEstimates,
    /// Smallest eigenvalue of corrected minus naive covariance, per arm `(treated, untreated)`.
    pub psd_gap: (f64, f64),
    pub take_up: f64,
    pub newton_iters: usize,
    pub lambda_bound_hit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McRow {
    pub name: String,
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub mean_se: f64,
    pub empirical_sd: f64,
    /// Share of replications whose nominal 95% interval covers the truth.
    pub coverage: f64,
    /// Monte Carlo standard error of the mean estimate.
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparatorRow {
    pub name: String,
    pub truth: f64,
    pub control_function_mean: f64,
    pub ols_mean: f64,
    pub iv_mean: f64,
    pub control_function_mc_se: f64,
    pub ols_mc_se: f64,
    pub iv_mc_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub rows: Vec<McRow>,
    pub comparators: Vec<ComparatorRow>,
    pub reps: usize,
    pub failures: Vec<(u64, String)>,
    pub replications: Vec<Replication>,
    pub mean_take_up: f64,
    /// Fingerprint of the public state, identical before and after the run.
    pub state_fingerprint: u64,
}

impl McResult {
    pub fn row(&self, name: &str) -> Option<&McRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn comparator(&self, name: &str) -> Option<&ComparatorRow> {
        self.comparators.iter().find(|r| r.name == name)
    }

    pub fn successes(&self) -> usize {
        self.replications.len()
    }
}

/// Estimation settings used inside each replication.
#[derive(Debug, Clone, Default)]
pub struct McConfig {
    pub first_stage: FirstStageConfig,
    pub second_stage: SecondStageConfig,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

/// Hash of network, covariates and assignment.
pub fn state_fingerprint(s: &PublicState) -> u64 {
    let mut h = DefaultHasher::new();
    s.n().hash(&mut h);
    for e in s.network().edges() {
        e.hash(&mut h);
    }
    for v in s.x().iter() {
        v.to_bits().hash(&mut h);
    }
    s.z().hash(&mut h);
    h.finish()
}

/// Parameter names in row order for a `k`-covariate design.
pub fn parameter_names(s: &PublicState, spec: &DgpSpec) -> Result<Vec<String>> {
    let (g1, g0) = spec.true_gammas()?;
    let mut names = spec.theta0.names(s.covariate_names());
    let arm_names = |g: &OutcomeParams, suffix: &str| -> Vec<String> {
        g.names(s.covariate_names())
            .into_iter()
            .map(|nm| match nm.split_once('[') {
                Some((head, tail)) => format!("{head}{suffix}[{tail}"),
                None => format!("{nm}{suffix}"),
            })
            .collect()
    };
    names.extend(arm_names(&g1, "1"));
    names.extend(arm_names(&g0, "0"));
    Ok(names)
}

pub fn run_replication(
    s: &PublicState,
    eq: &Equilibrium,
    spec: &DgpSpec,
    cfg: &McConfig,
    rep: u64,
) -> Result<Replication> {
    let data = generate_data(s, eq, spec, rep)?;
    let first = fit_first_stage(s, &data.d, &cfg.first_stage)?;
    let second = estimate_second_stage(s, &data.d, &data.y, &first, &cfg.second_stage)?;
    let comp = comparators(s, &eq.pi, &data.d, &data.y)?;

    let mut estimates: Vec<f64> = first.theta_hat.to_vector().iter().copied().collect();
    let mut std_errors = first.std_errors();
    let mut naive_std_errors = first.std_errors();
    for treated in [true, false] {
        estimates.extend(second.gamma(treated).as_vector().iter());
        std_errors.extend(second.std_errors(treated));
        naive_std_errors.extend(second.naive_std_errors(treated));
    }
    let gap = |t: bool| min_eigenvalue(&(second.vcov(t) - second.naive_vcov(t)));
    Ok(Replication {
        rep,
        estimates,
        std_errors,
        naive_std_errors,
        comparators: comp,
        psd_gap: (gap(true), gap(false)),
        take_up: data.d.iter().filter(|&&x| x).count() as f64 / s.n() as f64,
        newton_iters: first.newton_iters,
        lambda_bound_hit: first.lambda_bound_hit,
    })
}

fn mean_sd(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    let v: Vec<f64> = values.collect();
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    (mean, var.sqrt(), n)
}

/// Two-sided 95% normal critical value.
pub const Z_975: f64 = 1.959_963_984_540_054;

/// Replicate data generation and two-step estimation `reps` times on the fixed state `s`.
pub fn run_monte_carlo(s: &PublicState, spec: &DgpSpec, reps: usize, cfg: &McConfig) -> Result<McResult> {
    if reps == 0 {
        return Err(Error::Validation("need at least one replication".into()));
    }
    spec.validate(s)?;
    if !cfg.first_stage.solver.allow_nonunique && !(spec.theta0.lambda() < 1.0) {
        return Err(Error::NotUnique {
            lambda: spec.theta0.lambda(),
        });
    }
    let fingerprint = state_fingerprint(s);
    let eq = solve_equilibrium(s, &spec.theta0, &cfg.first_stage.solver)?;

    let job = || -> Vec<(u64, Result<Replication>)> {
        (0..reps as u64)
            .into_par_iter()
            .map(|r| (r, run_replication(s, &eq, spec, cfg, r)))
            .collect()
    };
    let outcomes = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Validation(format!("thread pool: {e}")))?
            .install(job),
        None => job(),
    };
    if state_fingerprint(s) != fingerprint {
        return Err(Error::Validation("public state changed during the run".into()));
    }

    let mut replications = Vec::new();
    let mut failures = Vec::new();
    for (r, out) in outcomes {
        match out {
            Ok(rep) => replications.push(rep),
            Err(e) => failures.push((r, format!("seed={} rep={r}: {e}", spec.seed))),
        }
    }
    if failures.len() as f64 > 0.05 * reps as f64 {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            reps,
        });
    }

    let names = parameter_names(s, spec)?;
    let truth = spec.truth_vector()?;
    let rows = names
        .iter()
        .enumerate()
        .map(|(p, name)| {
            let (mean, sd, m) = mean_sd(replications.iter().map(|r| r.estimates[p]));
            let (mean_se, _, _) = mean_sd(replications.iter().map(|r| r.std_errors[p]));
            let covered = replications
                .iter()
                .filter(|r| (r.estimates[p] - truth[p]).abs() <= Z_975 * r.std_errors[p])
                .count();
            McRow {
                name: name.clone(),
                truth: truth[p],
                mean_estimate: mean,
                bias: mean - truth[p],
                mean_se,
                empirical_sd: sd,
                coverage: covered as f64 / m as f64,
                mc_se: sd / (m as f64).sqrt(),
            }
        })
        .collect();

    let k = s.k();
    let theta_dim = k + 2;
    let width = 2 * (k + 1);
    // (alpha1, beta1, alpha0, beta0) positions inside the stacked estimate vector.
    let cf_index = |block: usize, j: usize| -> usize {
        match block {
            0 => theta_dim + j,
            1 => theta_dim + k + 1 + j,
            2 => theta_dim + width + j,
            _ => theta_dim + width + k + 1 + j,
        }
    };
    let mut comparator_rows = Vec::new();
    for block in 0..4 {
        for j in 0..k {
            let p = cf_index(block, j);
            let ci = block * k + j;
            let (cf_mean, cf_sd, m) = mean_sd(replications.iter().map(|r| r.estimates[p]));
            let (ols_mean, ols_sd, _) = mean_sd(replications.iter().map(|r| r.comparators.ols[ci]));
            let (iv_mean, iv_sd, _) = mean_sd(replications.iter().map(|r| r.comparators.iv[ci]));
            let root = (m as f64).sqrt();
            comparator_rows.push(ComparatorRow {
                name: names[p].clone(),
                truth: truth[p],
                control_function_mean: cf_mean,
                ols_mean,
                iv_mean,
                control_function_mc_se: cf_sd / root,
                ols_mc_se: ols_sd / root,
                iv_mc_se: iv_sd / root,
            });
        }
    }

    let mean_take_up = mean_sd(replications.iter().map(|r| r.take_up)).0;
    Ok(McResult {
        rows,
        comparators: comparator_rows,
        reps,
        failures,
        replications,
        mean_take_up,
        state_fingerprint: fingerprint,
    })
}
