//! Run configuration file: a preset name plus optional overrides.
//!
//! ```json
//! {
//!   "scenario": "wave_steering",
//!   "overrides": { "sigma": 0.0, "n_paths": 20 },
//!   "noise": { "n_modes": 16 },
//!   "cg": { "max_iters": 10 },
//!   "seed": 7
//! }
//! ```
//!
//! Unknown keys anywhere are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cg::{BetaRule, CgConfig};
use crate::dynamics::Model;
use crate::error::{Error, Result};
use crate::grid::Domain;
use crate::noise::SeedPolicy;
use crate::objective::CompiledCost;
use crate::scenarios::{build_scenario, Scenario, ScenarioName, ScenarioOverrides};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n_cells: Option<usize>,
    pub n_steps: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub n_modes: Option<usize>,
    /// Eigenvalue decay exponent.
    pub s: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub c_running: Option<f64>,
    pub c_terminal: Option<f64>,
    pub lambda: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CgSection {
    pub s0: Option<f64>,
    pub eta: Option<f64>,
    pub min_step: Option<f64>,
    pub max_iters: Option<usize>,
    pub n_paths_grad: Option<usize>,
    pub n_paths_eval: Option<usize>,
    pub beta_rule: Option<BetaRule>,
    pub restart_every: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioName,
    #[serde(default)]
    pub overrides: ScenarioOverrides,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub cost: CostSection,
    #[serde(default)]
    pub cg: CgSection,
    #[serde(default)]
    pub seed: u64,
}

/// Everything needed to run, built from a [`RunConfig`].
#[derive(Clone, Debug)]
pub struct Resolved {
    pub scenario: Scenario,
    pub model: Model,
    pub cost: CompiledCost,
    pub cg: CgConfig,
    pub seeds: SeedPolicy,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::config(format!("invalid run configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Applies the sections on top of the preset, in order: overrides, grid,
    /// noise, cost, cg.
    pub fn scenario(&self) -> Result<Scenario> {
        let mut o = self.overrides;
        if let Some(n) = self.grid.n_cells {
            o.n_cells = Some(n);
        }
        if let Some(n) = self.grid.n_steps {
            o.n_steps = Some(n);
        }
        if let Some(s) = self.noise.sigma {
            o.sigma = Some(s);
        }
        let mut sc = build_scenario(self.scenario, &o)?;
        if let Some(n) = self.noise.n_modes {
            if matches!(sc.spec.domain, Domain::Point) {
                return Err(Error::config("the scalar problem has a single noise mode"));
            }
            sc.spec.noise.n_modes = n;
        }
        if let Some(s) = self.noise.s {
            sc.spec.noise.decay = s;
        }
        let c = &self.cost;
        set(&mut sc.cost.c_running, c.c_running);
        set(&mut sc.cost.c_terminal, c.c_terminal);
        set(&mut sc.cost.lambda, c.lambda);
        let g = &self.cg;
        set(&mut sc.cg.s0, g.s0);
        set(&mut sc.cg.eta, g.eta);
        set(&mut sc.cg.min_step, g.min_step);
        set(&mut sc.cg.max_iters, g.max_iters);
        set(&mut sc.cg.n_paths_grad, g.n_paths_grad);
        set(&mut sc.cg.n_paths_eval, g.n_paths_eval);
        set(&mut sc.cg.beta_rule, g.beta_rule);
        if g.restart_every.is_some() {
            sc.cg.restart_every = g.restart_every;
        }
        sc.validate()?;
        Ok(sc)
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let scenario = self.scenario()?;
        let model = Model::new(scenario.spec.clone())?;
        let cost = CompiledCost::new(scenario.cost.clone(), &model)?;
        let cg = scenario.cg.clone();
        Ok(Resolved {
            scenario,
            model,
            cost,
            cg,
            seeds: SeedPolicy::new(self.seed),
        })
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
