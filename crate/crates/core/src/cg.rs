//! Probabilistic nonlinear conjugate gradient descent.
//!
//! Each outer iteration estimates the gradient on a fresh batch of forward
//! paths, builds `d_n = -grad_n + beta_n d_{n-1}`, and walks
//! `g + s d` with step halving until the Monte Carlo cost drops. Once the
//! step falls below `min_step` the candidate is accepted regardless and the
//! record is flagged as forced. Cost comparisons always use one evaluation
//! batch frozen for the whole run, so accept/reject is a deterministic
//! function of the controls.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlField, Model};
use crate::error::{Error, Result};
use crate::noise::{Purpose, SeedBatch, SeedPolicy};
use crate::objective::{
    estimate_cost, estimate_gradient, CompiledCost, CostBreakdown, GradientEstimate,
};

pub const MAX_HALVINGS: usize = 50;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaRule {
    /// `|grad_n| / |grad_{n-1}|`
    #[default]
    NormRatio,
    /// `|grad_n|^2 / |grad_{n-1}|^2`
    FletcherReevesSquared,
}

impl BetaRule {
    pub fn beta(self, norm: f64, prev_norm: f64) -> f64 {
        let ratio = norm / prev_norm;
        match self {
            BetaRule::NormRatio => ratio,
            BetaRule::FletcherReevesSquared => ratio * ratio,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CgConfig {
    pub s0: f64,
    pub eta: f64,
    #[serde(default = "default_min_step")]
    pub min_step: f64,
    pub max_iters: usize,
    pub n_paths_grad: usize,
    pub n_paths_eval: usize,
    #[serde(default)]
    pub beta_rule: BetaRule,
    #[serde(default)]
    pub restart_every: Option<usize>,
}

fn default_min_step() -> f64 {
    1e-4
}

impl CgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s0 > 0.0 && self.eta > 0.0 && self.min_step > 0.0) {
            return Err(Error::config("s0, eta and min_step must be positive"));
        }
        if !(self.min_step < self.s0) {
            return Err(Error::config(format!(
                "min_step {} must be below s0 {}",
                self.min_step, self.s0
            )));
        }
        if self.max_iters == 0 || self.n_paths_grad == 0 || self.n_paths_eval == 0 {
            return Err(Error::config("max_iters and path counts must be positive"));
        }
        if self.restart_every == Some(0) {
            return Err(Error::config("restart_every must be positive when set"));
        }
        Ok(())
    }
}

/// One line of the optimization history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub cost: f64,
    pub std_error: f64,
    pub grad_norm: f64,
    pub beta: f64,
    pub step: f64,
    pub accepted: bool,
    pub forced: bool,
}

#[derive(Clone, Debug)]
pub struct CgState {
    pub iteration: usize,
    pub control: ControlField,
    pub gradient: Option<GradientEstimate>,
    pub prev_grad_norm: Option<f64>,
    pub direction: Option<ControlField>,
    pub step: f64,
    pub cost: CostBreakdown,
    pub history: Vec<HistoryRecord>,
    pub terminated: bool,
    pub eval_seeds: SeedBatch,
    pub seeds: SeedPolicy,
}

impl CgState {
    pub fn new(
        model: &Model,
        cost: &CompiledCost,
        g0: ControlField,
        config: &CgConfig,
        seeds: SeedPolicy,
    ) -> Result<Self> {
        config.validate()?;
        let mut g0 = g0;
        g0.enforce_clamp(model.domain(), model.dt());
        let eval_seeds = seeds.batch(0, Purpose::Evaluation, config.n_paths_eval);
        let c0 = estimate_cost(model, &g0, cost, &eval_seeds)?;
        Ok(CgState {
            iteration: 0,
            control: g0,
            gradient: None,
            prev_grad_norm: None,
            direction: None,
            step: config.s0,
            cost: c0,
            history: Vec::new(),
            terminated: false,
            eval_seeds,
            seeds,
        })
    }
}

/// Advances one outer iteration: gradient, direction, line search.
pub fn cg_step(
    mut state: CgState,
    model: &Model,
    cost: &CompiledCost,
    config: &CgConfig,
) -> Result<CgState> {
    if state.terminated {
        return Ok(state);
    }
    let n = state.iteration;
    let iter_tag = u32::try_from(n).map_err(|_| Error::contract("iteration counter overflow"))?;
    let grad_seeds = state
        .seeds
        .batch(iter_tag, Purpose::Forward, config.n_paths_grad);
    let grad = estimate_gradient(model, &state.control, cost, &grad_seeds)
        .map_err(|e| e.at_iteration(n))?;

    if grad.norm < config.eta {
        state.history.push(HistoryRecord {
            iteration: n,
            cost: state.cost.total,
            std_error: state.cost.std_error,
            grad_norm: grad.norm,
            beta: 0.0,
            step: 0.0,
            accepted: false,
            forced: false,
        });
        state.gradient = Some(grad);
        state.terminated = true;
        return Ok(state);
    }

    let restart = config.restart_every.is_some_and(|k| n.is_multiple_of(k));
    let beta = match (state.prev_grad_norm, &state.direction) {
        (Some(prev), Some(_)) if !restart => config.beta_rule.beta(grad.norm, prev),
        _ => 0.0,
    };
    let mut direction = grad.field.scaled(-1.0);
    if let (Some(prev_dir), true) = (&state.direction, beta != 0.0) {
        for (d, p) in direction.values.iter_mut().zip(&prev_dir.values) {
            *d += beta * p;
        }
    }

    let domain = model.domain();
    let dt = model.dt();
    let mut s = config.s0;
    let mut halvings = 0;
    let (candidate, new_cost, forced) = loop {
        let cand = state.control.step_along(&direction, s, domain, dt)?;
        let c =
            estimate_cost(model, &cand, cost, &state.eval_seeds).map_err(|e| e.at_iteration(n))?;
        if c.total < state.cost.total {
            break (cand, c, false);
        }
        if s < config.min_step {
            break (cand, c, true);
        }
        halvings += 1;
        if halvings > MAX_HALVINGS {
            return Err(Error::LineSearch {
                iteration: n,
                halvings,
            });
        }
        s *= 0.5;
    };

    state.history.push(HistoryRecord {
        iteration: n,
        cost: new_cost.total,
        std_error: new_cost.std_error,
        grad_norm: grad.norm,
        beta,
        step: s,
        accepted: true,
        forced,
    });
    state.prev_grad_norm = Some(grad.norm);
    state.gradient = Some(grad);
    state.direction = Some(direction);
    state.control = candidate;
    state.cost = new_cost;
    state.step = config.s0;
    state.iteration += 1;
    Ok(state)
}

#[derive(Clone, Debug)]
pub struct OptimizeOutcome {
    /// Lowest-cost control seen on the evaluation batch.
    pub best_control: ControlField,
    pub best_cost: CostBreakdown,
    pub initial_cost: CostBreakdown,
    pub state: CgState,
}

impl OptimizeOutcome {
    pub fn converged(&self) -> bool {
        self.state.terminated
    }
}

pub fn optimize(
    model: &Model,
    cost: &CompiledCost,
    g0: ControlField,
    config: &CgConfig,
    seeds: SeedPolicy,
) -> Result<OptimizeOutcome> {
    let mut state = CgState::new(model, cost, g0, config, seeds)?;
    let initial_cost = state.cost;
    let mut best_control = state.control.clone();
    let mut best_cost = state.cost;
    while !state.terminated && state.iteration < config.max_iters {
        state = cg_step(state, model, cost, config)?;
        if !state.terminated && state.cost.total < best_cost.total {
            best_cost = state.cost;
            best_control = state.control.clone();
        }
    }
    Ok(OptimizeOutcome {
        best_control,
        best_cost,
        initial_cost,
        state,
    })
}
