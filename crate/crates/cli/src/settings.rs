//! Model options shared by every command, resolved from flags and config.

use anyhow::{bail, Result};
use serde::Serialize;

use spillover::{FirstStageConfig, SecondStageConfig, SolverConfig};

use crate::config::{pick, switch, ConfigFile};
use crate::ModelArgs;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ModelSettings {
    pub cf_order: usize,
    pub allow_nonunique: bool,
    pub dof_adjust: bool,
    pub solver_tol: f64,
    pub max_iter: usize,
    pub max_newton: usize,
}

impl ModelSettings {
    pub fn resolve(args: &ModelArgs, file: &ConfigFile) -> Result<Self> {
        let m = &file.model;
        let solver = SolverConfig::default();
        let s = ModelSettings {
            cf_order: pick(args.cf_order.map(usize::from), &m.cf_order).unwrap_or(1),
            allow_nonunique: switch(args.allow_nonunique, m.allow_nonunique),
            dof_adjust: switch(args.dof_adjust, m.dof_adjust),
            solver_tol: pick(args.solver_tol, &m.solver_tol).unwrap_or(solver.tol),
            max_iter: pick(args.max_iter, &m.max_iter).unwrap_or(solver.max_iter),
            max_newton: pick(args.max_newton, &m.max_newton).unwrap_or(FirstStageConfig::default().max_newton),
        };
        if !(1..=2).contains(&s.cf_order) {
            bail!("cf-order must be 1 or 2, got {}", s.cf_order);
        }
        if !(s.solver_tol > 0.0) || s.max_iter == 0 || s.max_newton == 0 {
            bail!("solver tolerance and iteration limits must be positive");
        }
        Ok(s)
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            tol: self.solver_tol,
            max_iter: self.max_iter,
            allow_nonunique: self.allow_nonunique,
        }
    }

    pub fn first_stage(&self) -> FirstStageConfig {
        FirstStageConfig {
            solver: self.solver(),
            max_newton: self.max_newton,
            unique_mode: !self.allow_nonunique,
            ..FirstStageConfig::default()
        }
    }

    pub fn second_stage(&self) -> SecondStageConfig {
        SecondStageConfig {
            cf_order: self.cf_order,
            dof_adjust: self.dof_adjust,
        }
    }
}
