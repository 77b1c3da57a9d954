//! Acceptance criteria, one test each. Every test prints a single
//! `criterion N: PASS|FAIL` line (written past the harness's output capture)
//! and then asserts the same verdict.

mod common;

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::*;
use nalgebra::DMatrix;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use spillover::counterfactual::{apply_policy, predict_mean_outcome, sweep_threshold};
use spillover::equilibrium::{grad_sigma, solve_equilibrium_traced};
use spillover::firststage::{loglik, loglik_from_sigma, score};
use spillover::secondstage::{mills0, mills1, mills_quadratic};
use spillover::simulate::{
    generate_data, run_monte_carlo, synthetic_state, DgpSpec, McConfig, McResult, SyntheticDesign, Z_975,
};
use spillover::{
    estimate_second_stage, fit_first_stage, solve_equilibrium, FirstStageConfig, GameParams, OutcomeParams,
    PolicyRule, PredictOptions, PublicState, SecondStageConfig, SolverConfig, Variant,
};

const REPS: usize = 500;
const OUTCOME_ROWS: [&str; 4] = ["alpha1[const]", "beta1[const]", "alpha0[const]", "beta0[const]"];
const TABLE_ROWS: [&str; 7] = [
    "theta1[const]",
    "theta2",
    "theta3",
    "alpha1[const]",
    "beta1[const]",
    "alpha0[const]",
    "beta0[const]",
];
const RHO_ROWS: [&str; 4] = ["rho_u1", "rho_e1", "rho_u0", "rho_e0"];

fn report(criterion: u32, pass: bool, detail: &str) -> bool {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {criterion}: {verdict} {detail}");
    pass
}

struct McRun {
    result: McResult,
    elapsed: Duration,
}

fn tight_solver() -> SolverConfig {
    SolverConfig {
        tol: 1e-15,
        max_iter: 100_000,
        ..SolverConfig::default()
    }
}

fn reference_state() -> &'static PublicState {
    static STATE: OnceLock<PublicState> = OnceLock::new();
    STATE.get_or_init(|| {
        synthetic_state(&SyntheticDesign::default(), DgpSpec::reference().seed)
            .unwrap()
            .state
    })
}

fn reference_mc() -> &'static McRun {
    static RUN: OnceLock<McRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let result = run_monte_carlo(reference_state(), &DgpSpec::reference(), REPS, &McConfig::default()).unwrap();
        McRun {
            result,
            elapsed: start.elapsed(),
        }
    })
}

fn exogenous_mc() -> &'static McRun {
    static RUN: OnceLock<McRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let spec = DgpSpec {
            loadings: [0.0; 4],
            ..DgpSpec::reference()
        };
        let start = Instant::now();
        let result = run_monte_carlo(reference_state(), &spec, REPS, &McConfig::default()).unwrap();
        McRun {
            result,
            elapsed: start.elapsed(),
        }
    })
}

#[test]
fn criterion_1_monte_carlo_table() {
    let run = reference_mc();
    let r = &run.result;
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for name in TABLE_ROWS {
        let row = r.row(name).unwrap();
        summary.push(format!(
            "{name}: bias={:.4} se={:.4} sd={:.4} cov={:.3}",
            row.bias, row.mean_se, row.empirical_sd, row.coverage
        ));
        if row.bias.abs() > 0.05 {
            failures.push(format!("{name} |bias| {:.4} > 0.05", row.bias.abs()));
        }
        if !(0.91..=0.98).contains(&row.coverage) {
            failures.push(format!("{name} coverage {:.3} outside [0.91, 0.98]", row.coverage));
        }
        let rel = (row.empirical_sd - row.mean_se).abs() / row.empirical_sd;
        if rel > 0.15 {
            failures.push(format!("{name} sd vs mean SE differ by {:.1}%", 100.0 * rel));
        }
    }
    if run.elapsed > Duration::from_secs(15 * 60) {
        failures.push(format!("runtime {:?} > 15 min", run.elapsed));
    }
    let detail = format!(
        "(reps={}, failures={}, take-up={:.3}, runtime={:.1}s) [{}]{}",
        r.reps,
        r.failures.len(),
        r.mean_take_up,
        run.elapsed.as_secs_f64(),
        summary.join("; "),
        if failures.is_empty() {
            String::new()
        } else {
            format!(" violations: {}", failures.join("; "))
        }
    );
    assert!(report(1, failures.is_empty(), &detail), "{detail}");
}

#[test]
fn criterion_2_equilibrium_correctness() {
    let mut r = rng(2);
    let cfg = SolverConfig::default();
    let mut worst_oracle: f64 = 0.0;
    let mut worst_contraction: f64 = f64::NEG_INFINITY;
    let mut solves = 0;
    let mut iterates = 0;

    let tight = tight_solver();
    // Checks ||s(t+1) - s*|| <= lambda ||s(t) - s*|| for every recorded iterate of a default
    // solve, against the fixed point iterated to ~1e-15; the slack absorbs rounding there.
    let mut check_contraction = |s: &PublicState, theta: &GameParams| {
        let reference = solve_equilibrium(s, theta, &tight).unwrap().sigma;
        let reference = &reference;
        let (_, trace) = solve_equilibrium_traced(s, theta, &cfg).unwrap();
        let lambda = theta.lambda();
        for w in trace.windows(2) {
            let lhs = sup_diff(&w[1], reference);
            let rhs = lambda * sup_diff(&w[0], reference) + 1e-14;
            worst_contraction = worst_contraction.max(lhs - rhs);
            iterates += 1;
        }
        solves += 1;
    };

    for _ in 0..120 {
        let n = r.random_range(2..=4);
        let s = random_state(&mut r, n, 0.5);
        let theta = random_theta(&mut r, 0.98);
        let eq = solve_equilibrium(&s, &theta, &cfg).unwrap();
        let oracle = brute_force_equilibrium(&s, &theta);
        worst_oracle = worst_oracle.max(sup_diff(&eq.sigma, &oracle));
        check_contraction(&s, &theta);
    }
    let mut larger: Vec<(PublicState, GameParams)> = (0..20)
        .map(|_| {
            let n = r.random_range(10..200);
            (random_state(&mut r, n, 0.05), random_theta(&mut r, 0.95))
        })
        .collect();
    larger.push((reference_state().clone(), DgpSpec::reference().theta0));
    for (s, theta) in &larger {
        check_contraction(s, theta);
    }

    let pass = worst_oracle <= 1e-8 && worst_contraction <= 0.0;
    let detail = format!(
        "(oracle instances=120, max sup-error={worst_oracle:.2e} <= 1e-8; contraction over {solves} solves / {iterates} steps, worst excess={worst_contraction:.2e} <= 0)"
    );
    assert!(report(2, pass, &detail), "{detail}");
}

/// Norm-wise relative error per column: max_i |a - b| / max_i |b|.
fn columnwise_rel_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|c| (a.column(c) - b.column(c)).amax() / b.column(c).amax().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

#[test]
fn criterion_3_gradient_fidelity() {
    let mut r = rng(3);
    let cfg = SolverConfig::default();
    let h = 1e-5;
    let mut worst_mean_theta0: f64 = 0.0;
    let mut worst_rows: f64 = 0.0;
    let mut worst_jac: f64 = 0.0;
    let mut instances = 0;
    let mut fitted = 0;

    // Per-agent central differences of l_i, and the mean score.
    let fd_rows = |s: &PublicState, d: &[bool], theta: &GameParams| -> DMatrix<f64> {
        let mut m = DMatrix::zeros(s.n(), theta.dim());
        for k in 0..theta.dim() {
            let up = solve_equilibrium(s, &theta.perturbed(k, h), &cfg).unwrap();
            let dn = solve_equilibrium(s, &theta.perturbed(k, -h), &cfg).unwrap();
            for i in 0..s.n() {
                let li = |p: f64| loglik_from_sigma(&d[i..=i], &[p]);
                m[(i, k)] = (li(up.sigma[i]) - li(dn.sigma[i])) / (2.0 * h);
            }
        }
        m
    };

    while instances < 24 {
        let n = r.random_range(80..160);
        let s = random_state(&mut r, n, 0.04);
        let theta0 = random_theta(&mut r, 0.85);
        let d = simulate_choices(&mut r, &s, &theta0);
        if d.iter().all(|&x| x) || d.iter().all(|&x| !x) {
            continue;
        }
        instances += 1;

        let rows0 = score(&s, &d, &theta0, &cfg).unwrap();
        worst_rows = worst_rows.max(columnwise_rel_error(&rows0, &fd_rows(&s, &d, &theta0)));
        for k in 0..theta0.dim() {
            let up = loglik(&s, &d, &theta0.perturbed(k, h), &cfg).unwrap();
            let dn = loglik(&s, &d, &theta0.perturbed(k, -h), &cfg).unwrap();
            let fd = (up - dn) / (2.0 * h);
            let analytic = rows0.column(k).mean();
            worst_mean_theta0 = worst_mean_theta0.max((analytic - fd).abs() / fd.abs());
        }

        let eq0 = solve_equilibrium(&s, &theta0, &cfg).unwrap();
        let fwd = grad_sigma(&s, &theta0, &eq0, spillover::equilibrium::GRAD_EPS, &cfg).unwrap();
        let hc = 1e-4;
        let mut central = DMatrix::zeros(s.n(), theta0.dim());
        for k in 0..theta0.dim() {
            let up = solve_equilibrium(&s, &theta0.perturbed(k, hc), &cfg).unwrap();
            let dn = solve_equilibrium(&s, &theta0.perturbed(k, -hc), &cfg).unwrap();
            for i in 0..s.n() {
                central[(i, k)] = (up.sigma[i] - dn.sigma[i]) / (2.0 * hc);
            }
        }
        worst_jac = worst_jac.max(columnwise_rel_error(&fwd, &central));

        // At the estimate the mean score is ~0, so compare the per-agent score rows.
        if let Ok(fit) = fit_first_stage(&s, &d, &FirstStageConfig::default()) {
            fitted += 1;
            worst_rows = worst_rows.max(columnwise_rel_error(&fit.score_rows, &fd_rows(&s, &d, &fit.theta_hat)));
        }
    }

    // The score is the per-agent matrix; its column means cancel, so their relative error
    // (reported, not gated) also reflects that cancellation.
    let pass = worst_rows <= 1e-4 && worst_jac <= 1e-3 && fitted >= 20;
    let detail = format!(
        "(instances={instances}, fitted={fitted}; per-agent score rows vs central FD of l_i at theta0 and theta-hat max rel err={worst_rows:.2e} (<= 1e-4); grad_sigma forward vs central (eps 1e-4) max rel err={worst_jac:.2e} (<= 1e-3); info: column-mean score vs FD of loglik at theta0 max rel err={worst_mean_theta0:.2e})"
    );
    assert!(report(3, pass, &detail), "{detail}");
}

#[test]
fn criterion_4_mills_identities() {
    let mut grid = Vec::new();
    for e in 1..=6 {
        let p = 10f64.powi(-e);
        grid.push(p);
        grid.push(1.0 - p);
    }
    grid.extend((1..20).map(|j| j as f64 * 0.05));
    let worst_identity = grid
        .iter()
        .map(|&s| (s * mills1(s).unwrap() + (1.0 - s) * mills0(s).unwrap()).abs())
        .fold(0.0, f64::max);
    let half = (mills1(0.5).unwrap() + 2.0 / (2.0 * std::f64::consts::PI).sqrt()).abs();
    let quad = (mills_quadratic(0.5).unwrap() - 2.0 / std::f64::consts::PI).abs();
    let pass = worst_identity <= 1e-12 && half <= 1e-12 && quad <= 1e-12;
    let detail = format!(
        "(max |s*l1 + (1-s)*l0| over {} points={worst_identity:.2e}; |mills1(0.5) + 2/sqrt(2pi)|={half:.2e}; |quadratic(0.5) - 2/pi|={quad:.2e})",
        grid.len()
    );
    assert!(report(4, pass, &detail), "{detail}");
}

#[test]
fn criterion_5_endogeneity_discrimination() {
    let endo = &reference_mc().result;
    let exo = &exogenous_mc().result;
    let mut notes = Vec::new();

    let ols_biased: Vec<String> = OUTCOME_ROWS
        .iter()
        .filter_map(|&name| {
            let c = endo.comparator(name).unwrap();
            let t = (c.ols_mean - c.truth) / c.ols_mc_se;
            (t.abs() > 3.0).then(|| format!("{name} ({t:.1} MC SE)"))
        })
        .collect();
    let cf_band: Vec<String> = OUTCOME_ROWS
        .iter()
        .filter_map(|&name| {
            let row = endo.row(name).unwrap();
            (row.bias.abs() > 0.05).then(|| format!("{name} bias {:.4}", row.bias))
        })
        .collect();
    notes.push(format!("OLS biased: [{}]", ols_biased.join(", ")));
    if !cf_band.is_empty() {
        notes.push(format!("control function outside 0.05 band: [{}]", cf_band.join(", ")));
    }

    // Paired comparison replication by replication.
    let names = spillover::simulate::parameter_names(reference_state(), &DgpSpec::reference()).unwrap();
    let k = reference_state().k();
    let mut disagree = Vec::new();
    for (block, &name) in OUTCOME_ROWS.iter().enumerate() {
        let p = names.iter().position(|n| n == name).unwrap();
        let diffs: Vec<f64> = exo
            .replications
            .iter()
            .map(|rep| rep.estimates[p] - rep.comparators.ols[block * k])
            .collect();
        let m = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / m;
        let sd = (diffs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
        let t = mean / (sd / m.sqrt());
        if t.abs() > 3.0 {
            disagree.push(format!("{name} ({t:.1} MC SE)"));
        }
    }
    let mut insignificant = Vec::new();
    for name in RHO_ROWS {
        let p = names.iter().position(|n| n == name).unwrap();
        let share = exo
            .replications
            .iter()
            .filter(|rep| (rep.estimates[p] / rep.std_errors[p]).abs() < Z_975)
            .count() as f64
            / exo.replications.len() as f64;
        insignificant.push((name, share));
    }
    let rho_ok = insignificant.iter().all(|&(_, s)| s >= 0.90);
    notes.push(format!(
        "rho=0: CF vs OLS disagreements [{}]; rho insignificant shares [{}]",
        disagree.join(", "),
        insignificant
            .iter()
            .map(|(n, s)| format!("{n}={s:.3}"))
            .collect::<Vec<_>>()
            .join(", ")
    ));

    let pass = !ols_biased.is_empty() && cf_band.is_empty() && disagree.is_empty() && rho_ok;
    let detail = format!("({})", notes.join("; "));
    assert!(report(5, pass, &detail), "{detail}");
}

#[test]
fn criterion_6_variance_ordering() {
    let mut worst = f64::INFINITY;
    let mut count = 0;
    for run in [reference_mc(), exogenous_mc()] {
        for rep in &run.result.replications {
            worst = worst.min(rep.psd_gap.0).min(rep.psd_gap.1);
            count += 1;
        }
    }
    let pass = worst >= -1e-10;
    let detail = format!("(replications={count}, min eigenvalue of corrected - naive={worst:.3e} >= -1e-10)");
    assert!(report(6, pass, &detail), "{detail}");
}

/// Hand computation of E[Y | S] for one unit from its equilibrium probability.
fn hand_mixture(x: &[f64], sigma: f64, pi: f64, g1: &OutcomeParams, g0: &OutcomeParams) -> f64 {
    let normal = Normal::standard();
    let t = normal.inverse_cdf(sigma);
    let phi = (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let arm = |g: &OutcomeParams, lam: f64| {
        let alpha: f64 = g.alpha().iter().zip(x).map(|(a, b)| a * b).sum();
        let beta: f64 = g.beta().iter().zip(x).map(|(a, b)| a * b).sum();
        alpha + g.rho_u() * lam + pi * (beta + g.rho_e() * lam)
    };
    sigma * arm(g1, -phi / sigma) + (1.0 - sigma) * arm(g0, phi / (1.0 - sigma))
}

#[test]
fn criterion_7_counterfactual_coherence() {
    let opts = PredictOptions::default();

    // Factual assignment reproduces the estimation sample's mean fitted value.
    let design = SyntheticDesign {
        wealth: Some((0.0, 1.0)),
        ..SyntheticDesign::default()
    };
    let spec = DgpSpec {
        theta0: GameParams::new(vec![-0.6, -0.3], 1.0, 1.2),
        alpha1: vec![2.0, 0.5],
        beta1: vec![1.0, 0.2],
        alpha0: vec![4.0, 0.3],
        beta0: vec![3.0, -0.2],
        ..DgpSpec::reference()
    };
    let st = synthetic_state(&design, 7).unwrap();
    let s = &st.state;
    let eq = solve_equilibrium(s, &spec.theta0, &SolverConfig::default()).unwrap();
    let data = generate_data(s, &eq, &spec, 0).unwrap();
    let first = fit_first_stage(s, &data.d, &FirstStageConfig::default()).unwrap();
    let second = estimate_second_stage(s, &data.d, &data.y, &first, &SecondStageConfig::default()).unwrap();
    let factual = predict_mean_outcome(s, &first.theta_hat, &second.gamma1, &second.gamma0, &opts).unwrap();
    let factual_gap = (factual.mean_outcome - second.mean_fitted()).abs();

    // Threshold limits equal the all-treated and none-treated predictions.
    let n = s.n();
    let all = predict_mean_outcome(&s.with_assignment(vec![true; n]).unwrap(), &first.theta_hat, &second.gamma1, &second.gamma0, &opts)
        .unwrap();
    let none = predict_mean_outcome(&s.with_assignment(vec![false; n]).unwrap(), &first.theta_hat, &second.gamma1, &second.gamma0, &opts)
        .unwrap();
    let sweep = sweep_threshold(
        s,
        "wealth",
        &first.theta_hat,
        &second.gamma1,
        &second.gamma0,
        &[f64::NEG_INFINITY, f64::INFINITY],
        &opts,
    )
    .unwrap();
    let limit_gap = (sweep[0].mean_outcome - none.mean_outcome)
        .abs()
        .max((sweep[1].mean_outcome - all.mean_outcome).abs());
    let limit_shares = sweep[0].treated_share == 0.0 && sweep[1].treated_share == 1.0;

    // Small games against the hand mixture with a brute-force equilibrium.
    let mut r = rng(7);
    let mut worst_hand: f64 = 0.0;
    for _ in 0..100 {
        let m = r.random_range(2..=4);
        let small = random_state(&mut r, m, 0.5);
        let theta = random_theta(&mut r, 0.9);
        let draw = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> { (0..2).map(|_| r.random_range(-2.0..2.0)).collect() };
        let g1 = OutcomeParams::linear(&draw(&mut r), r.random_range(-1.0..1.0), &draw(&mut r), r.random_range(-1.0..1.0)).unwrap();
        let g0 = OutcomeParams::linear(&draw(&mut r), r.random_range(-1.0..1.0), &draw(&mut r), r.random_range(-1.0..1.0)).unwrap();
        let tau = r.random_range(-1.0..1.0);
        let policy = apply_policy(&small, &PolicyRule { covariate: "wealth".into(), tau }).unwrap();
        let pred = predict_mean_outcome(&policy, &theta, &g1, &g0, &opts).unwrap();
        let sig = solve_equilibrium(&policy, &theta, &tight_solver()).unwrap().sigma;
        let net = policy.network();
        let mut total = 0.0;
        for i in 0..m {
            let pi = net.neighbors(i).iter().map(|&j| sig[j]).sum::<f64>() / net.degree(i) as f64;
            let x: Vec<f64> = policy.x().row(i).iter().copied().collect();
            let unit = hand_mixture(&x, sig[i], pi, &g1, &g0);
            worst_hand = worst_hand.max((unit - pred.unit_predictions[i]).abs());
            total += unit;
        }
        worst_hand = worst_hand.max((total / m as f64 - pred.mean_outcome).abs());
    }

    let no_interference = predict_mean_outcome(
        s,
        &first.theta_hat,
        &second.gamma1,
        &second.gamma0,
        &PredictOptions {
            variant: Variant::NoInterference,
            ..PredictOptions::default()
        },
    )
    .unwrap();

    let pass = factual_gap <= 1e-10 && limit_gap <= 1e-10 && limit_shares && worst_hand <= 1e-10;
    let detail = format!(
        "(factual vs mean fitted gap={factual_gap:.2e}; tau=+-inf vs all/none-treated gap={limit_gap:.2e}, shares {}/{}; hand mixture max error over 100 small games={worst_hand:.2e}; factual mean with/without interference {:.4}/{:.4})",
        sweep[0].treated_share, sweep[1].treated_share, factual.mean_outcome, no_interference.mean_outcome
    );
    assert!(report(7, pass, &detail), "{detail}");
}

#[test]
fn criterion_8_determinism() {
    let s = reference_state();
    let spec = DgpSpec::reference();
    let with_threads = |t: usize| {
        run_monte_carlo(
            s,
            &spec,
            24,
            &McConfig {
                threads: Some(t),
                ..McConfig::default()
            },
        )
        .unwrap()
    };
    let a = with_threads(1);
    let b = with_threads(4);
    let c = with_threads(4);
    let bits = |m: &McResult| -> Vec<u64> {
        m.rows
            .iter()
            .flat_map(|r| [r.mean_estimate, r.mean_se, r.empirical_sd, r.coverage])
            .chain(m.replications.iter().flat_map(|r| r.estimates.iter().chain(&r.std_errors).copied()))
            .map(f64::to_bits)
            .collect()
    };
    let mc_same = a == b && b == c && bits(&a) == bits(&b);

    // Threshold sweep evaluated on pools of different sizes.
    let design = SyntheticDesign {
        wealth: Some((0.0, 1.0)),
        ..SyntheticDesign::default()
    };
    let st = synthetic_state(&design, 8).unwrap();
    let theta = GameParams::new(vec![-0.6, -0.3], 1.0, 1.2);
    let g1 = OutcomeParams::linear(&[2.0, 0.5], 0.3, &[1.0, 0.2], 0.4).unwrap();
    let g0 = OutcomeParams::linear(&[4.0, 0.3], 0.2, &[3.0, -0.2], 0.2).unwrap();
    let grid = spillover::counterfactual::quantile_grid(&st.state, "wealth").unwrap();
    let sweep_bits = |t: usize| -> Vec<u64> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .unwrap()
            .install(|| sweep_threshold(&st.state, "wealth", &theta, &g1, &g0, &grid, &PredictOptions::default()))
            .unwrap()
            .iter()
            .flat_map(|p| [p.mean_outcome, p.mean_sigma, p.treated_share])
            .map(f64::to_bits)
            .collect()
    };
    let sweep_same = sweep_bits(1) == sweep_bits(3);

    let pass = mc_same && sweep_same;
    let detail = format!(
        "(Monte Carlo 24 reps on 1 vs 4 threads and rerun bit-identical={mc_same}; policy sweep on 1 vs 3 threads bit-identical={sweep_same}; CLI byte-identity covered by the cli crate's tests)"
    );
    assert!(report(8, pass, &detail), "{detail}");
}
