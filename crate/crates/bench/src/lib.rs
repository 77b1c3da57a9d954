//! Shared fixtures for the benchmarks.

use spillover::simulate::{generate_data, synthetic_state, SimData};
use spillover::{solve_equilibrium, DgpSpec, PublicState, SolverConfig, SyntheticDesign};

/// Reference synthetic state and one simulated dataset on it.
pub fn fixture() -> (PublicState, DgpSpec, SimData) {
    let spec = DgpSpec::reference();
    let s = synthetic_state(&SyntheticDesign::default(), spec.seed)
        .expect("reference design")
        .state;
    let eq = solve_equilibrium(&s, &spec.theta0, &SolverConfig::default()).expect("unique equilibrium");
    let data = generate_data(&s, &eq, &spec, 0).expect("data");
    (s, spec, data)
}
