//! Pathwise backward solve of the adjoint random PDE.
//!
//! The backward recursion is the exact transpose (in the trapezoid-weighted
//! inner product) of the tangent recursion in [`crate::dynamics`]:
//!
//! ```text
//! p[N]   = c_T (u[N] - u_T)
//! q[n+1] = (I - dt lap)^{-1} p[n+1]
//! p[n]   = q[n+1] + dt f'(u[n]) q[n+1] + dt c_run (u[n] - u_run(t_n))
//! ```
//!
//! `b[n] q[n+1]` is what pairs with a control perturbation on step `n`, so
//! the duality identity holds to roundoff on every path and resolution.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlField, Model, PathTrajectory};
use crate::error::{Error, Result};
use crate::objective::CompiledCost;

#[derive(Clone, Debug, PartialEq)]
pub struct AdjointTrajectory {
    /// `p[0..=N]`, same layout as a state trajectory.
    pub costates: PathTrajectory,
    /// `q[n+1]` for `n = 0..N`, the costate seen by the control on step `n`.
    pub control_costates: Vec<f64>,
}

impl AdjointTrajectory {
    pub fn control_costate(&self, step: usize) -> &[f64] {
        let n = self.costates.n_nodes;
        &self.control_costates[step * n..(step + 1) * n]
    }

    /// `b[n] q[n+1]`, this path's sample of the state part of the gradient.
    pub fn gradient_sample(&self, model: &Model) -> ControlField {
        let mut out = ControlField::zeros(model);
        for step in 0..model.n_steps() {
            let q = self.control_costate(step);
            for (i, v) in out.slice_mut(step).iter_mut().enumerate() {
                *v = model.gain(step, i) * q[i];
            }
        }
        out
    }
}

pub fn solve_adjoint(
    model: &Model,
    path: &PathTrajectory,
    cost: &CompiledCost,
) -> Result<AdjointTrajectory> {
    model.check_path(path)?;
    cost.check(model)?;
    let n = model.n_nodes();
    let steps = model.n_steps();
    let dt = model.dt();
    let reaction = &model.spec.reaction;
    let c_run = cost.weights.c_running;

    let mut p = vec![0.0; (steps + 1) * n];
    let mut q_all = vec![0.0; steps * n];
    let u_end = path.terminal();
    let target = &cost.terminal_target;
    for i in 0..n {
        p[steps * n + i] = cost.weights.c_terminal * (u_end[i] - target[i]);
    }
    let mut q = vec![0.0; n];
    for step in (0..steps).rev() {
        q.copy_from_slice(&p[(step + 1) * n..(step + 2) * n]);
        model.implicit_solve(&mut q);
        let u = path.state(step);
        let ubar = cost.running_target(step);
        let pn = &mut p[step * n..(step + 1) * n];
        for i in 0..n {
            let mut v = q[i] + dt * reaction.df(u[i]) * q[i];
            if c_run != 0.0 {
                v += dt * c_run * (u[i] - ubar[i]);
            }
            pn[i] = v;
        }
        if pn.iter().any(|v| !v.is_finite()) {
            return Err(Error::Blowup {
                step,
                stream: path.stream,
                iteration: None,
            });
        }
        q_all[step * n..(step + 1) * n].copy_from_slice(&q);
    }
    Ok(AdjointTrajectory {
        costates: PathTrajectory {
            n_nodes: n,
            n_steps: steps,
            states: p,
            stream: path.stream,
        },
        control_costates: q_all,
    })
}

/// Which costate snapshot the left side of the duality identity pairs with
/// the control on step `n`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// `q[n+1]`, the transpose of the tangent scheme.
    #[default]
    Matched,
    /// `p[n]`, a plausible-looking but inconsistent choice; negative control
    /// for the duality check.
    Mismatched,
}

/// Relative gap `|lhs - rhs| / (1 + |lhs|)` between
/// `sum dt <b p, h>` and `sum dt <c_run (u - u_run), y> + <c_T (u_N - u_T), y_N>`.
pub fn duality_gap(
    model: &Model,
    path: &PathTrajectory,
    cost: &CompiledCost,
    h: &ControlField,
    pairing: Pairing,
) -> Result<f64> {
    let adj = solve_adjoint(model, path, cost)?;
    let y = model.simulate_tangent(path, h)?;
    let domain = model.domain();
    let dt = model.dt();
    let n = model.n_nodes();
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut bp = vec![0.0; n];
    let mut resid = vec![0.0; n];
    for step in 0..model.n_steps() {
        let costate = match pairing {
            Pairing::Matched => adj.control_costate(step),
            Pairing::Mismatched => adj.costates.state(step),
        };
        for i in 0..n {
            bp[i] = model.gain(step, i) * costate[i];
        }
        lhs += dt * domain.dot(&bp, h.slice(step));
        let u = path.state(step);
        let ubar = cost.running_target(step);
        for i in 0..n {
            resid[i] = cost.weights.c_running * (u[i] - ubar[i]);
        }
        rhs += dt * domain.dot(&resid, y.state(step));
    }
    let u_end = path.terminal();
    for i in 0..n {
        resid[i] = cost.weights.c_terminal * (u_end[i] - cost.terminal_target[i]);
    }
    rhs += domain.dot(&resid, y.terminal());
    Ok((lhs - rhs).abs() / (1.0 + lhs.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ProblemSpec, Profile, ReactionModel};
    use crate::grid::{Domain, SpatialGrid};
    use crate::noise::{CovarianceSpec, Purpose, SeedPolicy, StreamId};
    use crate::objective::CostWeights;

    fn stream(path: u32) -> StreamId {
        StreamId {
            iteration: 0,
            path,
            purpose: Purpose::Forward,
        }
    }

    fn spec(reaction: ReactionModel, sigma: f64) -> ProblemSpec {
        ProblemSpec {
            domain: Domain::Interval(SpatialGrid::new(0.0, 20.0, 64).unwrap()),
            horizon: 15.0,
            n_steps: 100,
            reaction,
            gain: Profile::constant(1.0),
            noise: CovarianceSpec {
                n_modes: 32,
                decay: 1.0,
                amplitude: sigma,
            },
            initial: Profile::Front {
                center: 5.0,
                steepness: std::f64::consts::FRAC_1_SQRT_2,
            },
        }
    }

    fn steering_cost(c_terminal: f64) -> CostWeights {
        CostWeights {
            c_running: 1.0,
            c_terminal,
            lambda: 0.0,
            running_target: Profile::ReflectedFront {
                origin: 5.0,
                steepness: std::f64::consts::FRAC_1_SQRT_2,
                speed: 1.0,
                turn_time: 7.5,
            },
            terminal_target: Profile::constant(0.2),
        }
    }

    #[test]
    fn homogeneous_data_gives_zero_costate() {
        let mut s = spec(ReactionModel::Schloegl { k: 1.0, a: 0.3 }, 0.0);
        s.initial = Profile::constant(0.0);
        let m = Model::new(s).unwrap();
        let path = m
            .simulate_path(&ControlField::zeros(&m), &SeedPolicy::new(0), stream(0))
            .unwrap();
        let w = CostWeights {
            c_running: 0.0,
            c_terminal: 1.0,
            lambda: 0.0,
            running_target: Profile::constant(0.0),
            terminal_target: Profile::constant(0.0),
        };
        let adj = solve_adjoint(&m, &path, &CompiledCost::new(w, &m).unwrap()).unwrap();
        assert!(adj.costates.states.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn no_dynamics_transports_terminal_data() {
        let s = ProblemSpec {
            domain: Domain::Point,
            horizon: 1.0,
            n_steps: 20,
            reaction: ReactionModel::Polynomial {
                coefficients: vec![],
            },
            gain: Profile::constant(1.0),
            noise: CovarianceSpec {
                n_modes: 0,
                decay: 1.0,
                amplitude: 1.0,
            },
            initial: Profile::constant(0.0),
        };
        let m = Model::new(s).unwrap();
        let path = m
            .simulate_path(&ControlField::zeros(&m), &SeedPolicy::new(3), stream(1))
            .unwrap();
        let w = CostWeights {
            c_running: 0.0,
            c_terminal: 2.0,
            lambda: 0.0,
            running_target: Profile::constant(0.0),
            terminal_target: Profile::constant(0.5),
        };
        let adj = solve_adjoint(&m, &path, &CompiledCost::new(w, &m).unwrap()).unwrap();
        let expected = 2.0 * (path.terminal()[0] - 0.5);
        assert!(adj.costates.states.iter().all(|v| *v == expected));
    }

    #[test]
    fn terminal_condition_is_exact() {
        let m = Model::new(spec(
            ReactionModel::Schloegl {
                k: 1.0,
                a: 39.0 / 40.0,
            },
            0.5,
        ))
        .unwrap();
        let path = m
            .simulate_path(&ControlField::zeros(&m), &SeedPolicy::new(4), stream(2))
            .unwrap();
        let cost = CompiledCost::new(steering_cost(1.5), &m).unwrap();
        let adj = solve_adjoint(&m, &path, &cost).unwrap();
        for (p, u) in adj.costates.terminal().iter().zip(path.terminal()) {
            assert_eq!(*p, 1.5 * (u - 0.2));
        }
    }

    #[test]
    fn duality_identity_holds_to_roundoff() {
        for (k, reaction) in [
            ReactionModel::Schloegl {
                k: 1.0,
                a: 39.0 / 40.0,
            },
            ReactionModel::CubicQuadratic,
        ]
        .into_iter()
        .enumerate()
        {
            let m = Model::new(spec(reaction, 0.5)).unwrap();
            let cost = CompiledCost::new(steering_cost(1.0), &m).unwrap();
            let path = m
                .simulate_path(
                    &ControlField::zeros(&m),
                    &SeedPolicy::new(10),
                    stream(k as u32),
                )
                .unwrap();
            let h = ControlField::from_fn(&m, |t, x| (0.3 * x + t).sin() + 0.2);
            let gap = duality_gap(&m, &path, &cost, &h, Pairing::Matched).unwrap();
            assert!(gap <= 1e-10, "gap {gap}");
            let gap_scaled =
                duality_gap(&m, &path, &cost, &h.scaled(-4.0), Pairing::Matched).unwrap();
            assert!(gap_scaled <= 1e-10);
            assert_eq!(
                duality_gap(&m, &path, &cost, &ControlField::zeros(&m), Pairing::Matched).unwrap(),
                0.0
            );
            let bad = duality_gap(&m, &path, &cost, &h, Pairing::Mismatched).unwrap();
            assert!(bad > 1e-6, "mismatched pairing gap {bad}");
        }
    }

    #[test]
    fn costate_is_linear_in_cost_residuals() {
        let m = Model::new(spec(ReactionModel::CubicQuadratic, 0.5)).unwrap();
        let path = m
            .simulate_path(&ControlField::zeros(&m), &SeedPolicy::new(6), stream(0))
            .unwrap();
        let w = steering_cost(1.0);
        let mut w2 = w.clone();
        w2.c_running *= 2.0;
        w2.c_terminal *= 2.0;
        let a = solve_adjoint(&m, &path, &CompiledCost::new(w, &m).unwrap()).unwrap();
        let b = solve_adjoint(&m, &path, &CompiledCost::new(w2, &m).unwrap()).unwrap();
        for (x, y) in a.costates.states.iter().zip(&b.costates.states) {
            assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1e-300));
        }
    }
}
