#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use spillover::{solve_equilibrium, GameParams, Network, PublicState, SolverConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random graph on `n` nodes with no isolated node: a random tree plus extra edges.
pub fn random_network(rng: &mut ChaCha8Rng, n: usize, extra_prob: f64) -> Network {
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push((rng.random_range(0..i), i));
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(extra_prob) {
                edges.push((i, j));
            }
        }
    }
    Network::from_edges(n, edges).unwrap()
}

/// Intercept plus one standard-normal covariate named `wealth`.
pub fn random_state(rng: &mut ChaCha8Rng, n: usize, extra_prob: f64) -> PublicState {
    let net = random_network(rng, n, extra_prob);
    let x = DMatrix::from_fn(n, 2, |_, c| if c == 0 { 1.0 } else { rng.sample(StandardNormal) });
    let z = (0..n).map(|_| rng.random_bool(0.4)).collect();
    PublicState::new(net, x, z, vec!["const".into(), "wealth".into()]).unwrap()
}

/// Parameters with contraction margin at most `max_lambda`.
pub fn random_theta(rng: &mut ChaCha8Rng, max_lambda: f64) -> GameParams {
    let cap = max_lambda * (2.0 * std::f64::consts::PI).sqrt();
    GameParams::new(
        vec![rng.random_range(-1.0..1.0), rng.random_range(-0.8..0.8)],
        rng.random_range(-1.0..1.0),
        rng.random_range(-cap..cap),
    )
}

/// Choices drawn by threshold crossing at the equilibrium of `(s, theta)`.
pub fn simulate_choices(rng: &mut ChaCha8Rng, s: &PublicState, theta: &GameParams) -> Vec<bool> {
    let eq = solve_equilibrium(s, theta, &SolverConfig::default()).unwrap();
    let base = s.base_index(theta).unwrap();
    (0..s.n())
        .map(|i| {
            let v: f64 = rng.sample(StandardNormal);
            v <= base[i] + theta.theta3 * eq.pi[i]
        })
        .collect()
}

/// Standard normal CDF from statrs, independent of the crate's own implementation.
pub fn oracle_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Brute-force fixed point for tiny games: grid search over `[0,1]^n`, then
/// Gauss-Seidel sweeps solving each coordinate's equation by bisection.
pub fn brute_force_equilibrium(s: &PublicState, theta: &GameParams) -> Vec<f64> {
    let n = s.n();
    assert!(n <= 4, "brute force is for tiny games");
    let base = s.base_index(theta).unwrap();
    let net = s.network();
    let nb_mean = |sig: &[f64], i: usize| {
        let nb = net.neighbors(i);
        nb.iter().map(|&j| sig[j]).sum::<f64>() / nb.len() as f64
    };
    let defect = |sig: &[f64]| {
        (0..n)
            .map(|i| (oracle_cdf(base[i] + theta.theta3 * nb_mean(sig, i)) - sig[i]).abs())
            .fold(0.0, f64::max)
    };

    let steps = 20usize;
    let mut best = vec![0.5; n];
    let mut best_defect = f64::INFINITY;
    let total = (steps + 1).pow(n as u32);
    let mut point = vec![0.0; n];
    for code in 0..total {
        let mut c = code;
        for p in point.iter_mut() {
            *p = (c % (steps + 1)) as f64 / steps as f64;
            c /= steps + 1;
        }
        let d = defect(&point);
        if d < best_defect {
            best_defect = d;
            best.clone_from(&point);
        }
    }

    let mut sig = best;
    for _ in 0..10_000 {
        let mut change: f64 = 0.0;
        for i in 0..n {
            // sigma_i does not enter pi_i (no self-links): solve Phi(c) - x = 0 for x.
            let target = oracle_cdf(base[i] + theta.theta3 * nb_mean(&sig, i));
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if target - mid > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let new = 0.5 * (lo + hi);
            change = change.max((new - sig[i]).abs());
            sig[i] = new;
        }
        if change < 1e-15 {
            break;
        }
    }
    sig
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
