//! Estimation and counterfactual analysis of randomized experiments with
//! network spillovers and noncompliance.
//!
//! Treatment take-up is modeled as an incomplete-information game on a
//! network; outcomes follow a random-coefficient model whose spillover
//! channel is the equilibrium neighborhood score. Estimation is two-step:
//! nested-fixed-point maximum likelihood for the game, then control-function
//! regressions per treatment arm with first-stage-corrected variances.

/// Version of this library.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod error;
pub mod linalg;
pub mod normal;
pub mod network;
pub mod equilibrium;
pub mod firststage;
pub mod secondstage;
pub mod effects;
pub mod counterfactual;
pub mod simulate;
pub mod io;

pub use error::{Error, Result};
pub use counterfactual::{PolicyPrediction, PolicyRule, PredictOptions, PredictionMode, Variant};
pub use effects::{EffectCurve, Estimand};
pub use equilibrium::{solve_equilibrium, Equilibrium, GameParams, PublicState, SolverConfig};
pub use firststage::{fit_first_stage, FirstStageConfig, FirstStageFit};
pub use network::{Coordinates, Network};
pub use secondstage::{estimate_second_stage, OutcomeParams, SecondStageConfig, SecondStageFit};
pub use simulate::{DgpSpec, McConfig, McResult, SyntheticDesign};
