//! Forward time stepping of the controlled state equation and its
//! linearization.
//!
//! Both recursions use the same semi-implicit Euler-Maruyama structure:
//! diffusion implicit, reaction/control/noise explicit at the left endpoint,
//!
//! ```text
//! (I - dt lap) u[n+1] = u[n] + dt (f(u[n]) + b[n] g[n]) + sigma dW[n]
//! (I - dt lap) y[n+1] = y[n] + dt (f'(u[n]) y[n] + b[n] h[n]),   y[0] = 0
//! ```
//!
//! so the tangent is exactly the derivative of the discrete state map and its
//! transpose (see [`crate::adjoint`]) is available in closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Domain, TridiagonalFactor};
use crate::noise::{CovarianceSpec, NoiseBasis, SeedPolicy, StreamId};

/// Paths whose sup norm exceeds this are declared blown up.
pub const BLOWUP_LIMIT: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReactionModel {
    /// `f(u) = k u (u - 1)(a - u)`
    Schloegl { k: f64, a: f64 },
    /// `f(u) = -u^3 + u^2`
    CubicQuadratic,
    /// Drift `-V'(u) = u^2 / (2 (1 + u^2))` for `u >= 0`, zero below.
    SdePotential,
    /// `f(u) = sum_j coefficients[j] u^j`; the constant term must vanish.
    Polynomial { coefficients: Vec<f64> },
}

impl ReactionModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            ReactionModel::Schloegl { k, a } => {
                if !(*k > 0.0 && k.is_finite()) || !(*a > 0.0 && *a < 1.0) {
                    return Err(Error::config(format!(
                        "schloegl needs k > 0 and a in (0,1), got k={k} a={a}"
                    )));
                }
            }
            ReactionModel::Polynomial { coefficients } => {
                if coefficients.iter().any(|c| !c.is_finite()) {
                    return Err(Error::config(
                        "polynomial reaction has non-finite coefficients",
                    ));
                }
            }
            ReactionModel::CubicQuadratic | ReactionModel::SdePotential => {}
        }
        if self.f(0.0) != 0.0 {
            return Err(Error::config(format!(
                "reaction must satisfy f(0) = 0, got {}",
                self.f(0.0)
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn f(&self, u: f64) -> f64 {
        match self {
            ReactionModel::Schloegl { k, a } => k * u * (u - 1.0) * (a - u),
            ReactionModel::CubicQuadratic => u * u * (1.0 - u),
            ReactionModel::SdePotential => {
                if u >= 0.0 {
                    u * u / (2.0 * (1.0 + u * u))
                } else {
                    0.0
                }
            }
            ReactionModel::Polynomial { coefficients } => {
                coefficients.iter().rev().fold(0.0, |acc, c| acc * u + c)
            }
        }
    }

    #[inline]
    pub fn df(&self, u: f64) -> f64 {
        match self {
            ReactionModel::Schloegl { k, a } => k * (-3.0 * u * u + 2.0 * (a + 1.0) * u - a),
            ReactionModel::CubicQuadratic => -3.0 * u * u + 2.0 * u,
            ReactionModel::SdePotential => {
                if u >= 0.0 {
                    let s = 1.0 + u * u;
                    u / (s * s)
                } else {
                    0.0
                }
            }
            ReactionModel::Polynomial { coefficients } => coefficients
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (j, c)| acc * u + j as f64 * c),
        }
    }
}

/// A space(-time) profile used for initial data, targets and the control gain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Constant {
        value: f64,
    },
    /// `1 / (1 + exp(-steepness (x - center)))`
    Front {
        center: f64,
        steepness: f64,
    },
    /// A front whose center moves at `speed` until `turn_time`, then runs
    /// back along the same track.
    ReflectedFront {
        origin: f64,
        steepness: f64,
        speed: f64,
        turn_time: f64,
    },
    /// Nodal values, constant in time.
    Samples {
        values: Vec<f64>,
    },
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Profile {
    pub fn constant(value: f64) -> Self {
        Profile::Constant { value }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Profile::Constant { value } => Some(*value),
            _ => None,
        }
    }

    pub fn center_at(origin: f64, speed: f64, turn_time: f64, t: f64) -> f64 {
        if t <= turn_time {
            origin + speed * t
        } else {
            origin + speed * (2.0 * turn_time - t)
        }
    }

    pub fn sample(&self, t: f64, domain: &Domain) -> Result<Vec<f64>> {
        let n = domain.n_nodes();
        let xs = (0..n).map(|i| domain.node(i));
        let out: Vec<f64> = match self {
            Profile::Constant { value } => vec![*value; n],
            Profile::Front { center, steepness } => {
                xs.map(|x| sigmoid(steepness * (x - center))).collect()
            }
            Profile::ReflectedFront {
                origin,
                steepness,
                speed,
                turn_time,
            } => {
                let c = Self::center_at(*origin, *speed, *turn_time, t);
                xs.map(|x| sigmoid(steepness * (x - c))).collect()
            }
            Profile::Samples { values } => {
                domain.check_len(values.len())?;
                values.clone()
            }
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("profile evaluates to non-finite values"));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub domain: Domain,
    pub horizon: f64,
    pub n_steps: usize,
    pub reaction: ReactionModel,
    /// Control gain `b(t, x)`.
    pub gain: Profile,
    pub noise: CovarianceSpec,
    pub initial: Profile,
}

impl ProblemSpec {
    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }

    pub fn n_nodes(&self) -> usize {
        self.domain.n_nodes()
    }

    pub fn is_point(&self) -> bool {
        matches!(self.domain, Domain::Point)
    }

    pub fn validate(&self) -> Result<()> {
        if let Domain::Interval(g) = &self.domain {
            g.validate().map_err(|e| Error::config(e.to_string()))?;
        }
        if self.n_steps == 0 || !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::config(format!(
                "need horizon > 0 and n_steps >= 1, got T={} n_steps={}",
                self.horizon, self.n_steps
            )));
        }
        self.reaction.validate()?;
        self.noise.validate()?;
        Ok(())
    }
}

/// A validated problem with everything precomputed that every path reuses.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ProblemSpec,
    implicit: Option<TridiagonalFactor>,
    basis: NoiseBasis,
    initial: Vec<f64>,
    gain: GainTable,
}

#[derive(Clone, Debug)]
enum GainTable {
    Uniform(f64),
    PerStep(Vec<Vec<f64>>),
}

impl Model {
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        spec.validate()?;
        let implicit = match &spec.domain {
            Domain::Interval(g) => Some(g.implicit_diffusion(spec.dt()).factor()?),
            Domain::Point => None,
        };
        let basis = NoiseBasis::new(&spec.noise, &spec.domain);
        let initial = spec.initial.sample(0.0, &spec.domain)?;
        let gain = match spec.gain.as_constant() {
            Some(b) if b.is_finite() => GainTable::Uniform(b),
            Some(b) => {
                return Err(Error::config(format!(
                    "control gain must be finite, got {b}"
                )))
            }
            None => GainTable::PerStep(
                (0..spec.n_steps)
                    .map(|n| spec.gain.sample(spec.time(n), &spec.domain))
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(Model {
            spec,
            implicit,
            basis,
            initial,
            gain,
        })
    }

    pub fn dt(&self) -> f64 {
        self.spec.dt()
    }

    pub fn n_steps(&self) -> usize {
        self.spec.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.spec.n_nodes()
    }

    pub fn domain(&self) -> &Domain {
        &self.spec.domain
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.initial
    }

    pub(crate) fn gain(&self, step: usize, node: usize) -> f64 {
        match &self.gain {
            GainTable::Uniform(b) => *b,
            GainTable::PerStep(t) => t[step][node],
        }
    }

    /// Applies `(I - dt lap)^{-1}` in place; identity on a point domain.
    pub(crate) fn implicit_solve(&self, v: &mut [f64]) {
        if let Some(f) = &self.implicit {
            f.solve_in_place(v);
        }
    }

    pub(crate) fn fill_noise(&self, rng: &mut impl rand::Rng, out: &mut [f64]) {
        self.basis.fill_increment(self.dt(), rng, out);
    }

    fn check_control(&self, g: &ControlField) -> Result<()> {
        if g.n_steps != self.n_steps() || g.n_nodes != self.n_nodes() {
            return Err(Error::contract(format!(
                "control is {}x{}, problem is {}x{}",
                g.n_steps,
                g.n_nodes,
                self.n_steps(),
                self.n_nodes()
            )));
        }
        Ok(())
    }

    /// One semi-implicit step; `dw` is the unit-amplitude increment.
    pub fn step_forward(&self, step: usize, u: &[f64], g: &[f64], dw: &[f64]) -> Result<Vec<f64>> {
        let n = self.n_nodes();
        if u.len() != n || g.len() != n || dw.len() != n {
            return Err(Error::contract(
                "step_forward field lengths do not match the domain",
            ));
        }
        if step >= self.n_steps() {
            return Err(Error::contract(format!("step {step} outside horizon")));
        }
        let mut next = vec![0.0; n];
        self.step_into(step, u, g, dw, &mut next)?;
        Ok(next)
    }

    fn step_into(
        &self,
        step: usize,
        u: &[f64],
        g: &[f64],
        dw: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        let dt = self.dt();
        let sigma = self.spec.noise.amplitude;
        for i in 0..u.len() {
            out[i] = u[i]
                + dt * (self.spec.reaction.f(u[i]) + self.gain(step, i) * g[i])
                + sigma * dw[i];
        }
        self.implicit_solve(out);
        guard(out, step + 1)
    }

    /// Simulates one path drawing increments from `stream`.
    pub fn simulate_path(
        &self,
        g: &ControlField,
        seeds: &SeedPolicy,
        stream: StreamId,
    ) -> Result<PathTrajectory> {
        let mut rng = seeds.rng(stream);
        let sigma = self.spec.noise.amplitude;
        let mut path = self
            .simulate_path_with(g, |_, buf| {
                // draws are skipped entirely without noise; the stream stays untouched
                if sigma != 0.0 {
                    self.fill_noise(&mut rng, buf);
                }
            })
            .map_err(|e| e.with_stream(stream))?;
        path.stream = Some(stream);
        Ok(path)
    }

    /// Simulates one path with caller-supplied unit increments.
    pub fn simulate_path_with<F>(&self, g: &ControlField, mut noise: F) -> Result<PathTrajectory>
    where
        F: FnMut(usize, &mut [f64]),
    {
        self.check_control(g)?;
        let n = self.n_nodes();
        let steps = self.n_steps();
        let mut states = Vec::with_capacity((steps + 1) * n);
        states.extend_from_slice(&self.initial);
        let mut dw = vec![0.0; n];
        let mut next = vec![0.0; n];
        for step in 0..steps {
            noise(step, &mut dw);
            let u = &states[step * n..(step + 1) * n];
            self.step_into(step, u, g.slice(step), &dw, &mut next)?;
            states.extend_from_slice(&next);
        }
        Ok(PathTrajectory {
            n_nodes: n,
            n_steps: steps,
            states,
            stream: None,
        })
    }

    /// Linearized response `y^h` of the discrete state map along `base`.
    pub fn simulate_tangent(
        &self,
        base: &PathTrajectory,
        h: &ControlField,
    ) -> Result<PathTrajectory> {
        self.check_control(h)?;
        self.check_path(base)?;
        let n = self.n_nodes();
        let steps = self.n_steps();
        let dt = self.dt();
        let mut states = vec![0.0; (steps + 1) * n];
        for step in 0..steps {
            let (done, rest) = states.split_at_mut((step + 1) * n);
            let y = &done[step * n..];
            let next = &mut rest[..n];
            let u = base.state(step);
            let hs = h.slice(step);
            for i in 0..n {
                next[i] =
                    y[i] + dt * (self.spec.reaction.df(u[i]) * y[i] + self.gain(step, i) * hs[i]);
            }
            self.implicit_solve(next);
            guard(next, step + 1)?;
        }
        Ok(PathTrajectory {
            n_nodes: n,
            n_steps: steps,
            states,
            stream: base.stream,
        })
    }

    pub(crate) fn check_path(&self, p: &PathTrajectory) -> Result<()> {
        if p.n_nodes != self.n_nodes()
            || p.n_steps != self.n_steps()
            || p.states.len() != (p.n_steps + 1) * p.n_nodes
        {
            return Err(Error::contract(
                "trajectory does not match the problem dimensions",
            ));
        }
        Ok(())
    }
}

fn guard(v: &[f64], step: usize) -> Result<()> {
    if v.iter().any(|x| !(x.abs() <= BLOWUP_LIMIT)) {
        return Err(Error::Blowup {
            step,
            stream: None,
            iteration: None,
        });
    }
    Ok(())
}

/// Deterministic control on the (time step, node) grid, piecewise constant
/// over each step `[t_n, t_{n+1})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlField {
    pub n_steps: usize,
    pub n_nodes: usize,
    pub values: Vec<f64>,
    /// Radius of the admissible L6 ball, if enforced.
    pub clamp: Option<f64>,
}

impl ControlField {
    pub fn zeros(model: &Model) -> Self {
        Self::filled(model, 0.0)
    }

    pub fn filled(model: &Model, value: f64) -> Self {
        ControlField {
            n_steps: model.n_steps(),
            n_nodes: model.n_nodes(),
            values: vec![value; model.n_steps() * model.n_nodes()],
            clamp: None,
        }
    }

    pub fn from_fn(model: &Model, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut g = Self::zeros(model);
        for n in 0..model.n_steps() {
            let t = model.spec.time(n);
            for i in 0..model.n_nodes() {
                g.values[n * model.n_nodes() + i] = f(t, model.domain().node(i));
            }
        }
        g
    }

    pub fn slice(&self, step: usize) -> &[f64] {
        &self.values[step * self.n_nodes..(step + 1) * self.n_nodes]
    }

    pub fn slice_mut(&mut self, step: usize) -> &mut [f64] {
        &mut self.values[step * self.n_nodes..(step + 1) * self.n_nodes]
    }

    fn check_same_shape(&self, other: &ControlField) -> Result<()> {
        if self.n_steps != other.n_steps || self.n_nodes != other.n_nodes {
            return Err(Error::contract("control fields have different shapes"));
        }
        Ok(())
    }

    /// Space-time pairing `sum_n dt <a_n, b_n>`, exact for piecewise-constant
    /// controls; the gradient is the Riesz representer for this product.
    pub fn inner(&self, other: &ControlField, domain: &Domain, dt: f64) -> Result<f64> {
        self.check_same_shape(other)?;
        domain.check_len(self.n_nodes)?;
        Ok(dt
            * (0..self.n_steps)
                .map(|n| domain.dot(self.slice(n), other.slice(n)))
                .sum::<f64>())
    }

    pub fn norm(&self, domain: &Domain, dt: f64) -> Result<f64> {
        Ok(self.inner(self, domain, dt)?.sqrt())
    }

    pub fn l6_norm(&self, domain: &Domain, dt: f64) -> f64 {
        let mut acc = 0.0;
        for n in 0..self.n_steps {
            for (i, g) in self.slice(n).iter().enumerate() {
                acc += domain.weight(i) * g.powi(6);
            }
        }
        (dt * acc).powf(1.0 / 6.0)
    }

    /// `self + alpha * dir`, rescaled into the L6 ball when a clamp is set.
    pub fn step_along(
        &self,
        dir: &ControlField,
        alpha: f64,
        domain: &Domain,
        dt: f64,
    ) -> Result<ControlField> {
        self.check_same_shape(dir)?;
        let mut out = self.clone();
        out.values
            .iter_mut()
            .zip(&dir.values)
            .for_each(|(g, d)| *g += alpha * d);
        out.enforce_clamp(domain, dt);
        Ok(out)
    }

    pub fn enforce_clamp(&mut self, domain: &Domain, dt: f64) {
        if let Some(kappa) = self.clamp {
            let norm = self.l6_norm(domain, dt);
            if norm > kappa {
                let s = kappa / norm;
                self.values.iter_mut().for_each(|g| *g *= s);
            }
        }
    }

    /// `self - other`, unclamped.
    pub fn difference(&self, other: &ControlField) -> Result<ControlField> {
        self.check_same_shape(other)?;
        let mut out = self.clone();
        out.clamp = None;
        out.values
            .iter_mut()
            .zip(&other.values)
            .for_each(|(a, b)| *a -= b);
        Ok(out)
    }

    pub fn scaled(&self, alpha: f64) -> ControlField {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|g| *g *= alpha);
        out
    }
}

/// Full trajectory of one path (state, tangent or costate), `n_steps + 1`
/// snapshots stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PathTrajectory {
    pub n_nodes: usize,
    pub n_steps: usize,
    pub states: Vec<f64>,
    pub stream: Option<StreamId>,
}

impl PathTrajectory {
    pub fn state(&self, n: usize) -> &[f64] {
        &self.states[n * self.n_nodes..(n + 1) * self.n_nodes]
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.n_steps)
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks(self.n_nodes)
    }
}
