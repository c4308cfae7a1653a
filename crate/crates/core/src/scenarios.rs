//! Preset problems and the analyses that go with them.
//!
//! * `wave_steering`: Schloegl front on `[0, 20]`, `T = 15`, tracked against a
//!   reference front that first runs right at unit speed and then turns back.
//! * `unstable_state`: `f(u) = u^2 - u^3` started in the unstable state
//!   `u = 0` with a terminal cost that wants to stay there, `T = 30`.
//! * `sde_toy`: the scalar SDE `du = (-V'(u) + g) dt + sigma dB` with
//!   `J = E[u_T^2 / 2]`, whose adjoint has a closed form.

use std::f64::consts::FRAC_1_SQRT_2;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cg::{BetaRule, CgConfig};
use crate::dynamics::{ControlField, Model, PathTrajectory, ProblemSpec, Profile, ReactionModel};
use crate::error::{Error, Result};
use crate::grid::{Domain, SpatialGrid};
use crate::noise::{CovarianceSpec, SeedBatch};
use crate::objective::CostWeights;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    WaveSteering,
    UnstableState,
    SdeToy,
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wave_steering" => Ok(ScenarioName::WaveSteering),
            "unstable_state" => Ok(ScenarioName::UnstableState),
            "sde_toy" => Ok(ScenarioName::SdeToy),
            other => Err(Error::config(format!("unknown scenario '{other}'"))),
        }
    }
}

/// The knobs a preset lets callers change.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioOverrides {
    pub sigma: Option<f64>,
    pub n_cells: Option<usize>,
    pub n_steps: Option<usize>,
    /// Sets both the gradient and the evaluation batch size.
    pub n_paths: Option<usize>,
    pub eta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: ScenarioName,
    pub spec: ProblemSpec,
    pub cost: CostWeights,
    pub cg: CgConfig,
}

pub const SCHLOEGL_A: f64 = 39.0 / 40.0;

/// Front speed `sqrt(2) (1/2 - a)` of the traveling wave `u0(x + c t)` for
/// the unit-rate Schloegl nonlinearity.
pub fn schloegl_wave_speed(a: f64) -> f64 {
    std::f64::consts::SQRT_2 * (0.5 - a)
}

pub fn build_scenario(name: ScenarioName, overrides: &ScenarioOverrides) -> Result<Scenario> {
    let o = overrides;
    let scenario = match name {
        ScenarioName::WaveSteering => {
            let horizon = 15.0;
            let n_paths = o.n_paths.unwrap_or(100);
            Scenario {
                name,
                spec: ProblemSpec {
                    domain: interval(o.n_cells.unwrap_or(401))?,
                    horizon,
                    n_steps: o.n_steps.unwrap_or(1500),
                    reaction: ReactionModel::Schloegl {
                        k: 1.0,
                        a: SCHLOEGL_A,
                    },
                    gain: Profile::constant(1.0),
                    noise: CovarianceSpec {
                        amplitude: o.sigma.unwrap_or(0.5),
                        ..CovarianceSpec::default()
                    },
                    initial: Profile::Front {
                        center: 5.0,
                        steepness: FRAC_1_SQRT_2,
                    },
                },
                cost: CostWeights {
                    c_running: 1.0,
                    c_terminal: 0.0,
                    lambda: 0.0,
                    running_target: Profile::ReflectedFront {
                        origin: 5.0,
                        steepness: FRAC_1_SQRT_2,
                        speed: 1.0,
                        turn_time: horizon / 2.0,
                    },
                    terminal_target: Profile::constant(0.0),
                },
                cg: CgConfig {
                    s0: 2.0,
                    eta: o.eta.unwrap_or(0.05),
                    min_step: 1e-4,
                    max_iters: 200,
                    n_paths_grad: n_paths,
                    n_paths_eval: n_paths,
                    beta_rule: BetaRule::NormRatio,
                    restart_every: None,
                },
            }
        }
        ScenarioName::UnstableState => {
            let n_paths = o.n_paths.unwrap_or(100);
            Scenario {
                name,
                spec: ProblemSpec {
                    domain: interval(o.n_cells.unwrap_or(401))?,
                    horizon: 30.0,
                    n_steps: o.n_steps.unwrap_or(3000),
                    reaction: ReactionModel::CubicQuadratic,
                    gain: Profile::constant(1.0),
                    noise: CovarianceSpec {
                        amplitude: o.sigma.unwrap_or(0.5),
                        ..CovarianceSpec::default()
                    },
                    initial: Profile::constant(0.0),
                },
                cost: CostWeights {
                    c_running: 0.0,
                    c_terminal: 1.0,
                    lambda: 0.0,
                    running_target: Profile::constant(0.0),
                    terminal_target: Profile::constant(0.0),
                },
                cg: CgConfig {
                    s0: 1.0,
                    eta: o.eta.unwrap_or(0.002),
                    min_step: 1e-4,
                    max_iters: 100,
                    n_paths_grad: n_paths,
                    n_paths_eval: n_paths,
                    beta_rule: BetaRule::NormRatio,
                    restart_every: None,
                },
            }
        }
        ScenarioName::SdeToy => {
            let n_paths = o.n_paths.unwrap_or(1000);
            if o.n_cells.is_some() {
                return Err(Error::config(
                    "sde_toy has no spatial grid; n_cells cannot be set",
                ));
            }
            Scenario {
                name,
                spec: ProblemSpec {
                    domain: Domain::Point,
                    horizon: 1.0,
                    n_steps: o.n_steps.unwrap_or(1000),
                    reaction: ReactionModel::SdePotential,
                    gain: Profile::constant(1.0),
                    noise: CovarianceSpec {
                        n_modes: 1,
                        decay: 1.0,
                        amplitude: o.sigma.unwrap_or(1.0),
                    },
                    initial: Profile::constant(0.0),
                },
                cost: CostWeights {
                    c_running: 0.0,
                    c_terminal: 1.0,
                    lambda: 0.0,
                    running_target: Profile::constant(0.0),
                    terminal_target: Profile::constant(0.0),
                },
                cg: CgConfig {
                    s0: 1.0,
                    eta: o.eta.unwrap_or(1e-3),
                    min_step: 1e-4,
                    max_iters: 100,
                    n_paths_grad: n_paths,
                    n_paths_eval: n_paths,
                    beta_rule: BetaRule::NormRatio,
                    restart_every: None,
                },
            }
        }
    };
    scenario.validate()?;
    Ok(scenario)
}

impl Scenario {
    /// Checks the preset-specific constraints on top of the generic ones.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.cost.validate()?;
        self.cg.validate()?;
        if self.name == ScenarioName::SdeToy && self.cost.c_running != 0.0 {
            return Err(Error::config(
                "sde_toy has a terminal cost only; c_running must be 0",
            ));
        }
        Ok(())
    }
}

fn interval(n_cells: usize) -> Result<Domain> {
    SpatialGrid::new(0.0, 20.0, n_cells)
        .map(Domain::Interval)
        .map_err(|e| Error::config(e.to_string()))
}

/// Per snapshot, the largest `x` where `u` crosses `level` (linear
/// interpolation); NaN when the snapshot never crosses.
pub fn track_wave_front(path: &PathTrajectory, grid: &SpatialGrid, level: f64) -> Vec<f64> {
    path.snapshots()
        .map(|u| front_position(u, grid, level))
        .collect()
}

fn front_position(u: &[f64], grid: &SpatialGrid, level: f64) -> f64 {
    for i in (0..u.len() - 1).rev() {
        let (a, b) = (u[i] - level, u[i + 1] - level);
        if a == 0.0 {
            return grid.node(i);
        }
        if a * b < 0.0 || b == 0.0 {
            let frac = a / (a - b);
            return grid.node(i) + frac * grid.dx();
        }
    }
    f64::NAN
}

/// Least-squares slope of `y` against `x`, skipping NaN samples.
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(_, b)| b.is_finite())
        .map(|(a, b)| (*a, *b))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = pts.iter().map(|(a, _)| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// `u_T exp(dt sum_{k >= from} -V''(u_k))`: the closed-form adjoint of the
/// scalar problem at snapshot `from`, left-endpoint rule in time.
pub fn sde_analytic_costate(model: &Model, path: &PathTrajectory, from: usize) -> f64 {
    let dt = model.dt();
    let exponent: f64 = (from..path.n_steps)
        .map(|k| dt * model.spec.reaction.df(path.state(k)[0]))
        .sum();
    path.terminal()[0] * exponent.exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

impl MeanEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        MeanEstimate {
            estimate: mean,
            std_error: (var / n).sqrt(),
            n_paths: samples.len(),
        }
    }
}

/// Monte Carlo estimate of `grad J(0)(t_probe)` for the scalar problem using
/// the closed-form adjoint on every path.
pub fn sde_gradient_positivity(
    model: &Model,
    t_probe: f64,
    seeds: &SeedBatch,
) -> Result<MeanEstimate> {
    sde_gradient_samples(model, t_probe, seeds, |path, k| {
        Ok(sde_analytic_costate(model, path, k))
    })
}

/// Same estimator with the numerical backward recursion in place of the
/// closed form; used to cross-check the two adjoint routes.
pub fn sde_gradient_numeric(
    model: &Model,
    cost: &crate::objective::CompiledCost,
    t_probe: f64,
    seeds: &SeedBatch,
) -> Result<MeanEstimate> {
    sde_gradient_samples(model, t_probe, seeds, |path, k| {
        let adj = crate::adjoint::solve_adjoint(model, path, cost)?;
        Ok(adj.costates.state(k)[0])
    })
}

fn sde_gradient_samples<F>(
    model: &Model,
    t_probe: f64,
    seeds: &SeedBatch,
    sample: F,
) -> Result<MeanEstimate>
where
    F: Fn(&PathTrajectory, usize) -> Result<f64> + Sync,
{
    use rayon::prelude::*;

    if !model.spec.is_point() {
        return Err(Error::contract(
            "gradient positivity analysis needs the scalar problem",
        ));
    }
    if seeds.is_empty() {
        return Err(Error::contract("need at least one path"));
    }
    let k = (t_probe / model.dt()).round() as usize;
    if k > model.n_steps() {
        return Err(Error::contract(format!(
            "probe time {t_probe} beyond the horizon"
        )));
    }
    let g = ControlField::zeros(model);
    let samples: Vec<Result<f64>> = seeds
        .streams
        .par_chunks(4096)
        .flat_map_iter(|chunk| {
            chunk
                .iter()
                .map(|s| {
                    let path = model.simulate_path(&g, &seeds.policy, *s)?;
                    sample(&path, k)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let samples = samples.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(MeanEstimate::from_samples(&samples))
}
