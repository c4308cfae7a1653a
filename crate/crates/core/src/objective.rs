//! Quadratic tracking cost, its Monte Carlo estimate, and the Monte Carlo
//! adjoint gradient `E[b p] + lambda g`.
//!
//! Discrete cost of one path (left-endpoint rule in time, trapezoid in space):
//!
//! ```text
//! J = c_run/2  sum_{n<N} dt |u[n] - u_run(t_n)|^2
//!   + c_T/2    |u[N] - u_T|^2
//!   + lambda/2 sum_{n<N} dt |g[n]|^2
//! ```
//!
//! This is precisely the functional whose derivative the adjoint recursion
//! computes, so adjoint gradients agree with finite differences of
//! [`estimate_cost`] up to difference truncation under common random numbers.
//!
//! Path work runs on the rayon pool in fixed-size chunks; results are always
//! combined in path-index order so estimates do not depend on thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::solve_adjoint;
use crate::dynamics::{ControlField, Model, PathTrajectory, Profile};
use crate::error::{Error, Result};
use crate::noise::{SeedBatch, StreamId};

const PATH_CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub c_running: f64,
    pub c_terminal: f64,
    pub lambda: f64,
    pub running_target: Profile,
    pub terminal_target: Profile,
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("c_running", self.c_running),
            ("c_terminal", self.c_terminal),
            ("lambda", self.lambda),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::config(format!(
                    "cost weight {name} must be finite and >= 0, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Cost weights with targets sampled on a model's grid.
#[derive(Clone, Debug)]
pub struct CompiledCost {
    pub weights: CostWeights,
    running: Vec<Vec<f64>>,
    pub terminal_target: Vec<f64>,
    n_steps: usize,
    n_nodes: usize,
}

impl CompiledCost {
    pub fn new(weights: CostWeights, model: &Model) -> Result<Self> {
        weights.validate()?;
        let domain = model.domain();
        let running = if weights.running_target.as_constant().is_some() {
            vec![weights.running_target.sample(0.0, domain)?]
        } else {
            (0..model.n_steps())
                .map(|n| weights.running_target.sample(model.spec.time(n), domain))
                .collect::<Result<_>>()?
        };
        let terminal_target = weights.terminal_target.sample(model.spec.horizon, domain)?;
        Ok(CompiledCost {
            weights,
            running,
            terminal_target,
            n_steps: model.n_steps(),
            n_nodes: model.n_nodes(),
        })
    }

    pub fn running_target(&self, step: usize) -> &[f64] {
        if self.running.len() == 1 {
            &self.running[0]
        } else {
            &self.running[step]
        }
    }

    pub(crate) fn check(&self, model: &Model) -> Result<()> {
        if self.n_steps != model.n_steps() || self.n_nodes != model.n_nodes() {
            return Err(Error::contract("cost was compiled for a different problem"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub running: f64,
    pub terminal: f64,
    pub control_penalty: f64,
    pub total: f64,
    pub n_paths: usize,
    pub std_error: f64,
}

pub fn pathwise_cost(
    model: &Model,
    path: &PathTrajectory,
    g: &ControlField,
    cost: &CompiledCost,
) -> Result<CostBreakdown> {
    model.check_path(path)?;
    cost.check(model)?;
    let domain = model.domain();
    let dt = model.dt();
    let w = &cost.weights;
    let mut diff = vec![0.0; model.n_nodes()];
    let mut running = 0.0;
    if w.c_running != 0.0 {
        for step in 0..model.n_steps() {
            let u = path.state(step);
            for ((d, a), b) in diff.iter_mut().zip(u).zip(cost.running_target(step)) {
                *d = a - b;
            }
            running += dt * domain.dot(&diff, &diff);
        }
        running *= 0.5 * w.c_running;
    }
    for ((d, a), b) in diff
        .iter_mut()
        .zip(path.terminal())
        .zip(&cost.terminal_target)
    {
        *d = a - b;
    }
    let terminal = 0.5 * w.c_terminal * domain.dot(&diff, &diff);
    let control_penalty = if w.lambda != 0.0 {
        0.5 * w.lambda * g.inner(g, domain, dt)?
    } else {
        0.0
    };
    Ok(CostBreakdown {
        running,
        terminal,
        control_penalty,
        total: running + terminal + control_penalty,
        n_paths: 1,
        std_error: 0.0,
    })
}

/// Runs `f` on every stream, parallel inside fixed chunks, and hands results
/// to `sink` strictly in stream order.
pub(crate) fn for_each_path<T, F, S>(streams: &[StreamId], f: F, mut sink: S) -> Result<()>
where
    T: Send,
    F: Fn(StreamId) -> Result<T> + Sync,
    S: FnMut(T),
{
    for chunk in streams.chunks(PATH_CHUNK) {
        let results: Vec<Result<T>> = chunk.par_iter().map(|s| f(*s)).collect();
        for r in results {
            sink(r?);
        }
    }
    Ok(())
}

fn deterministic(model: &Model) -> bool {
    model.spec.noise.amplitude == 0.0
}

pub fn estimate_cost(
    model: &Model,
    g: &ControlField,
    cost: &CompiledCost,
    seeds: &SeedBatch,
) -> Result<CostBreakdown> {
    if seeds.is_empty() {
        return Err(Error::contract("estimate_cost needs at least one path"));
    }
    if deterministic(model) {
        let path = model.simulate_path(g, &seeds.policy, seeds.streams[0])?;
        let mut c = pathwise_cost(model, &path, g, cost)?;
        c.n_paths = seeds.len();
        return Ok(c);
    }
    let mut samples = Vec::with_capacity(seeds.len());
    for_each_path(
        &seeds.streams,
        |s| {
            let path = model.simulate_path(g, &seeds.policy, s)?;
            pathwise_cost(model, &path, g, cost)
        },
        |c| samples.push(c),
    )?;
    let n = samples.len() as f64;
    let running = samples.iter().map(|c| c.running).sum::<f64>() / n;
    let terminal = samples.iter().map(|c| c.terminal).sum::<f64>() / n;
    let control_penalty = samples[0].control_penalty;
    let total = running + terminal + control_penalty;
    let std_error = if samples.len() > 1 {
        let var = samples
            .iter()
            .map(|c| (c.total - total).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(CostBreakdown {
        running,
        terminal,
        control_penalty,
        total,
        n_paths: samples.len(),
        std_error,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    /// `E[b q] + lambda g` on the control grid.
    pub field: ControlField,
    /// Per-cell standard error of the Monte Carlo mean.
    pub std_error: Vec<f64>,
    pub n_paths: usize,
    pub norm: f64,
}

pub fn estimate_gradient(
    model: &Model,
    g: &ControlField,
    cost: &CompiledCost,
    seeds: &SeedBatch,
) -> Result<GradientEstimate> {
    if seeds.is_empty() {
        return Err(Error::contract("estimate_gradient needs at least one path"));
    }
    let sample = |s: StreamId| -> Result<ControlField> {
        let path = model.simulate_path(g, &seeds.policy, s)?;
        let adj = solve_adjoint(model, &path, cost)?;
        Ok(adj.gradient_sample(model))
    };
    let cells = g.values.len();
    let (mean, std_error) = if deterministic(model) {
        (sample(seeds.streams[0])?.values, vec![0.0; cells])
    } else {
        let mut sum = vec![0.0; cells];
        let mut sq = vec![0.0; cells];
        for_each_path(&seeds.streams, sample, |s| {
            for ((a, b), v) in sum.iter_mut().zip(sq.iter_mut()).zip(&s.values) {
                *a += v;
                *b += v * v;
            }
        })?;
        let n = seeds.len() as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let se = if seeds.len() > 1 {
            mean.iter()
                .zip(&sq)
                .map(|(m, q)| ((q / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt())
                .collect()
        } else {
            vec![0.0; cells]
        };
        (mean, se)
    };
    let lambda = cost.weights.lambda;
    let mut field = g.clone();
    field.clamp = None;
    for (f, m) in field.values.iter_mut().zip(&mean) {
        *f = m + lambda * *f;
    }
    let norm = field.norm(model.domain(), model.dt())?;
    Ok(GradientEstimate {
        field,
        std_error,
        n_paths: seeds.len(),
        norm,
    })
}

/// `min_h <grad, h - g>`; non-negative (up to tolerance) at a critical point.
pub fn minimum_principle_residual(
    model: &Model,
    g: &ControlField,
    grad: &GradientEstimate,
    test_controls: &[ControlField],
) -> Result<f64> {
    if test_controls.is_empty() {
        return Err(Error::contract(
            "minimum principle needs at least one test control",
        ));
    }
    let mut best = f64::INFINITY;
    for h in test_controls {
        if let Some(kappa) = g.clamp {
            if h.l6_norm(model.domain(), model.dt()) > kappa * (1.0 + 1e-12) {
                return Err(Error::contract(
                    "test control lies outside the admissible ball",
                ));
            }
        }
        let diff = h.difference(g)?;
        best = best.min(grad.field.inner(&diff, model.domain(), model.dt())?);
    }
    Ok(best)
}

/// Central-difference directional derivative of [`estimate_cost`] next to
/// the adjoint prediction `<grad, dir>`, on one common seed batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalCheck {
    pub adjoint: f64,
    pub finite_difference: f64,
    pub relative_error: f64,
}

pub fn directional_check(
    model: &Model,
    g: &ControlField,
    cost: &CompiledCost,
    seeds: &SeedBatch,
    grad: &GradientEstimate,
    dir: &ControlField,
    fd_step: f64,
) -> Result<DirectionalCheck> {
    let domain = model.domain();
    let dt = model.dt();
    let mut plus = g.step_along(dir, fd_step, domain, dt)?;
    let mut minus = g.step_along(dir, -fd_step, domain, dt)?;
    plus.clamp = None;
    minus.clamp = None;
    let jp = estimate_cost(model, &plus, cost, seeds)?.total;
    let jm = estimate_cost(model, &minus, cost, seeds)?.total;
    let finite_difference = (jp - jm) / (2.0 * fd_step);
    let adjoint = grad.field.inner(dir, domain, dt)?;
    let scale = adjoint.abs().max(finite_difference.abs());
    let relative_error = if scale == 0.0 {
        0.0
    } else {
        (adjoint - finite_difference).abs() / scale
    };
    Ok(DirectionalCheck {
        adjoint,
        finite_difference,
        relative_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ProblemSpec, ReactionModel};
    use crate::grid::{Domain, SpatialGrid};
    use crate::noise::{CovarianceSpec, Purpose, SeedPolicy};

    fn model(sigma: f64, horizon: f64, steps: usize) -> Model {
        Model::new(ProblemSpec {
            domain: Domain::Interval(SpatialGrid::new(0.0, 20.0, 33).unwrap()),
            horizon,
            n_steps: steps,
            reaction: ReactionModel::CubicQuadratic,
            gain: Profile::constant(1.0),
            noise: CovarianceSpec {
                n_modes: 16,
                decay: 1.0,
                amplitude: sigma,
            },
            initial: Profile::constant(0.0),
        })
        .unwrap()
    }

    fn weights(c_running: f64, c_terminal: f64, lambda: f64) -> CostWeights {
        CostWeights {
            c_running,
            c_terminal,
            lambda,
            running_target: Profile::constant(0.0),
            terminal_target: Profile::constant(0.0),
        }
    }

    fn fake_path(m: &Model, value: f64) -> PathTrajectory {
        PathTrajectory {
            n_nodes: m.n_nodes(),
            n_steps: m.n_steps(),
            states: vec![value; (m.n_steps() + 1) * m.n_nodes()],
            stream: None,
        }
    }

    #[test]
    fn pathwise_cost_examples() {
        let m = model(0.0, 15.0, 30);
        let zero = ControlField::zeros(&m);
        let c = CompiledCost::new(weights(1.0, 1.0, 1.0), &m).unwrap();
        assert_eq!(
            pathwise_cost(&m, &fake_path(&m, 0.0), &zero, &c)
                .unwrap()
                .total,
            0.0
        );

        let c = CompiledCost::new(weights(0.0, 0.0, 2.0), &m).unwrap();
        let one = ControlField::filled(&m, 1.0);
        let b = pathwise_cost(&m, &fake_path(&m, 0.3), &one, &c).unwrap();
        assert!((b.control_penalty - 300.0).abs() < 1e-9 && b.total == b.control_penalty);

        let c = CompiledCost::new(weights(0.0, 1.0, 0.0), &m).unwrap();
        let b = pathwise_cost(&m, &fake_path(&m, 1.0), &zero, &c).unwrap();
        assert!((b.total - 10.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_estimate_has_zero_error() {
        let m = model(0.0, 2.0, 20);
        let g = ControlField::filled(&m, 0.05);
        let c = CompiledCost::new(weights(1.0, 1.0, 0.1), &m).unwrap();
        let seeds = SeedPolicy::new(1).batch(0, Purpose::Evaluation, 7);
        let est = estimate_cost(&m, &g, &c, &seeds).unwrap();
        let path = m
            .simulate_path(&g, &seeds.policy, seeds.streams[0])
            .unwrap();
        let single = pathwise_cost(&m, &path, &g, &c).unwrap();
        assert_eq!(est.total, single.total);
        assert_eq!(est.std_error, 0.0);
        assert_eq!(est.n_paths, 7);
    }

    #[test]
    fn estimates_are_reproducible() {
        let m = model(0.5, 2.0, 20);
        let g = ControlField::filled(&m, 0.05);
        let c = CompiledCost::new(weights(1.0, 1.0, 0.1), &m).unwrap();
        let seeds = SeedPolicy::new(5).batch(2, Purpose::Evaluation, 40);
        let a = estimate_cost(&m, &g, &c, &seeds).unwrap();
        let b = estimate_cost(&m, &g, &c, &seeds).unwrap();
        assert_eq!(a.total.to_bits(), b.total.to_bits());
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let ga = estimate_gradient(&m, &g, &c, &seeds).unwrap();
        let gb = pool
            .install(|| estimate_gradient(&m, &g, &c, &seeds))
            .unwrap();
        assert_eq!(ga, gb);
    }

    #[test]
    fn gradient_special_cases() {
        let m = model(0.5, 2.0, 20);
        let g = ControlField::from_fn(&m, |t, x| t - x / 10.0);
        let seeds = SeedPolicy::new(5).batch(0, Purpose::Forward, 5);
        let c = CompiledCost::new(weights(0.0, 0.0, 0.0), &m).unwrap();
        let est = estimate_gradient(&m, &g, &c, &seeds).unwrap();
        assert!(est.field.values.iter().all(|v| *v == 0.0));
        let c = CompiledCost::new(weights(0.0, 0.0, 1.0), &m).unwrap();
        let est = estimate_gradient(&m, &g, &c, &seeds).unwrap();
        assert_eq!(est.field.values, g.values);
    }

    #[test]
    fn gradient_matches_central_differences_under_crn() {
        let m = model(0.5, 3.0, 30);
        let g = ControlField::from_fn(&m, |t, x| 0.1 * (x / 4.0 + t).sin());
        let c = CompiledCost::new(weights(1.0, 1.0, 0.3), &m).unwrap();
        let seeds = SeedPolicy::new(12).batch(0, Purpose::Forward, 8);
        let grad = estimate_gradient(&m, &g, &c, &seeds).unwrap();
        for k in 0..3 {
            let dir = ControlField::from_fn(&m, |t, x| ((k + 1) as f64 * x / 3.0 - t).cos());
            let chk = directional_check(&m, &g, &c, &seeds, &grad, &dir, 1e-4).unwrap();
            assert!(chk.relative_error <= 1e-6, "{chk:?}");
        }
    }

    #[test]
    fn minimum_principle_examples() {
        let m = model(0.0, 2.0, 10);
        let g = ControlField::filled(&m, 0.2);
        let zero_grad = GradientEstimate {
            field: ControlField::zeros(&m),
            std_error: vec![0.0; g.values.len()],
            n_paths: 1,
            norm: 0.0,
        };
        let tests = vec![ControlField::filled(&m, 3.0), ControlField::zeros(&m)];
        assert_eq!(
            minimum_principle_residual(&m, &g, &zero_grad, &tests).unwrap(),
            0.0
        );

        let field = ControlField::from_fn(&m, |t, x| t * x / 20.0 - 0.3);
        let norm = field.norm(m.domain(), m.dt()).unwrap();
        let grad = GradientEstimate {
            std_error: vec![0.0; g.values.len()],
            n_paths: 1,
            norm,
            field,
        };
        let h = g.step_along(&grad.field, -1.0, m.domain(), m.dt()).unwrap();
        let r = minimum_principle_residual(&m, &g, &grad, &[h]).unwrap();
        assert!((r + norm * norm).abs() < 1e-10 * norm * norm);
        assert!(minimum_principle_residual(&m, &g, &grad, &[]).is_err());
    }

    #[test]
    fn std_error_scales_like_inverse_root_n() {
        let m = model(0.5, 1.0, 25);
        let g = ControlField::zeros(&m);
        let c = CompiledCost::new(weights(0.0, 1.0, 0.0), &m).unwrap();
        let policy = SeedPolicy::new(99);
        let se: Vec<f64> = [100usize, 400, 1600]
            .iter()
            .enumerate()
            .map(|(k, &n)| {
                estimate_cost(&m, &g, &c, &policy.batch(k as u32, Purpose::Evaluation, n))
                    .unwrap()
                    .std_error
            })
            .collect();
        for w in se.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio / 2.0 - 1.0).abs() < 0.2, "{se:?}");
        }
    }
}
