//! Data-generating process and synthetic design from `--spec` and `[dgp]`.

use std::path::Path;

use anyhow::{bail, Context as _, Result};
use serde::Serialize;

use spillover::simulate::GeometricSpec;
use spillover::{DgpSpec, GameParams, SyntheticDesign};

use crate::config::{pick, DgpSection};
use crate::data::require_file;

/// Top-level keys of a `--spec` file; they take precedence over `[dgp]`.
pub fn load_spec(path: &Path) -> Result<DgpSection> {
    require_file(path)?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing spec {}", path.display()))
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DgpSettings {
    pub seed: u64,
    pub theta1: Vec<f64>,
    pub theta2: f64,
    pub theta3: f64,
    pub alpha1: Vec<f64>,
    pub beta1: Vec<f64>,
    pub alpha0: Vec<f64>,
    pub beta0: Vec<f64>,
    pub loadings: [f64; 4],
    pub noise_sd: f64,
    pub n_points: usize,
    pub radius: f64,
    pub target_degree: f64,
    pub assign_prob: f64,
    pub wealth: Option<(f64, f64)>,
}

impl DgpSettings {
    pub fn resolve(spec: Option<&DgpSection>, file: &DgpSection, seed: Option<u64>) -> Result<Self> {
        let empty = DgpSection::default();
        let hi = spec.unwrap_or(&empty);
        let r = DgpSpec::reference();
        let geo = GeometricSpec::default();
        let design = SyntheticDesign::default();
        macro_rules! get {
            ($f:ident, $default:expr) => {
                pick(hi.$f.clone(), &file.$f).unwrap_or($default)
            };
        }
        let wealth = match (pick(hi.wealth_mean, &file.wealth_mean), pick(hi.wealth_sd, &file.wealth_sd)) {
            (None, None) => None,
            (Some(m), Some(sd)) if sd >= 0.0 => Some((m, sd)),
            _ => bail!("wealth needs both wealth_mean and a nonnegative wealth_sd"),
        };
        let s = DgpSettings {
            seed: seed.unwrap_or(r.seed),
            theta1: get!(theta1, r.theta0.theta1.clone()),
            theta2: get!(theta2, r.theta0.theta2),
            theta3: get!(theta3, r.theta0.theta3),
            alpha1: get!(alpha1, r.alpha1.clone()),
            beta1: get!(beta1, r.beta1.clone()),
            alpha0: get!(alpha0, r.alpha0.clone()),
            beta0: get!(beta0, r.beta0.clone()),
            loadings: get!(loadings, r.loadings),
            noise_sd: get!(noise_sd, r.noise_sd),
            n_points: get!(n_points, geo.n_points),
            radius: get!(radius, geo.radius),
            target_degree: get!(target_degree, geo.target_degree),
            assign_prob: get!(assign_prob, design.assign_prob),
            wealth,
        };
        if !(0.0..=1.0).contains(&s.assign_prob) {
            bail!("assign_prob must lie in [0, 1]");
        }
        if !(s.noise_sd >= 0.0) {
            bail!("noise_sd must be nonnegative");
        }
        Ok(s)
    }

    pub fn dgp(&self) -> DgpSpec {
        DgpSpec {
            theta0: GameParams::new(self.theta1.clone(), self.theta2, self.theta3),
            alpha1: self.alpha1.clone(),
            beta1: self.beta1.clone(),
            alpha0: self.alpha0.clone(),
            beta0: self.beta0.clone(),
            loadings: self.loadings,
            noise_sd: self.noise_sd,
            seed: self.seed,
        }
    }

    pub fn design(&self) -> SyntheticDesign {
        SyntheticDesign {
            geometric: GeometricSpec {
                n_points: self.n_points,
                radius: self.radius,
                target_degree: self.target_degree,
            },
            assign_prob: self.assign_prob,
            wealth: self.wealth,
        }
    }
}
