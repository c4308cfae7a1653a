//! Gradient verification and paired control comparisons.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adjoint::{duality_gap, Pairing};
use crate::dynamics::{ControlField, Model};
use crate::error::Result;
use crate::noise::{Purpose, SeedBatch, SeedPolicy, StreamId};
use crate::objective::{
    directional_check, estimate_gradient, for_each_path, pathwise_cost, CompiledCost,
    DirectionalCheck,
};
use crate::scenarios::MeanEstimate;

/// Largest admissible relative error of adjoint against central differences.
pub const FD_TOLERANCE: f64 = 1e-6;
/// Largest admissible relative duality gap.
pub const DUALITY_TOLERANCE: f64 = 1e-10;

const AUX_ITERATION: u32 = u32::MAX;

/// `sum_{a,b<3} c_ab cos(a pi t / T) cos(b pi (x - x_min) / L)` with standard
/// normal coefficients, rescaled to control norm `norm`; only `b = 0` on the
/// scalar problem.
pub fn random_smooth_field(model: &Model, rng: &mut impl Rng, norm: f64) -> Result<ControlField> {
    let horizon = model.spec.horizon;
    let (x0, len, nb) = match model.domain().grid() {
        Some(g) => (g.x_min, g.length(), 3),
        None => (0.0, 1.0, 1),
    };
    let coeffs: Vec<f64> = (0..3 * nb).map(|_| rng.sample(StandardNormal)).collect();
    let field = ControlField::from_fn(model, |t, x| {
        let mut v = 0.0;
        for a in 0..3 {
            for b in 0..nb {
                let ct = (a as f64 * std::f64::consts::PI * t / horizon).cos();
                let cx = (b as f64 * std::f64::consts::PI * (x - x0) / len).cos();
                v += coeffs[a * nb + b] * ct * cx;
            }
        }
        v
    });
    let current = field.norm(model.domain(), model.dt())?;
    Ok(field.scaled(norm / current))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub fd_step: f64,
    pub n_paths: usize,
    pub directions: Vec<DirectionalCheck>,
    pub duality_gaps: Vec<f64>,
    pub pairing: Pairing,
    pub max_fd_error: f64,
    pub max_duality_gap: f64,
    pub passed: bool,
}

/// Compares the adjoint gradient with central differences along `n_dirs`
/// random smooth unit directions and checks the duality identity on up to
/// four paths per direction. The base control is itself a random field of
/// norm `0.5` so that the gradient does not vanish by symmetry.
pub fn gradcheck(
    model: &Model,
    cost: &CompiledCost,
    n_paths: usize,
    seeds: SeedPolicy,
    n_dirs: usize,
    fd_step: f64,
    pairing: Pairing,
) -> Result<GradcheckReport> {
    let mut rng = seeds.rng(StreamId {
        iteration: AUX_ITERATION,
        path: 0,
        purpose: Purpose::Holdout,
    });
    let g = random_smooth_field(model, &mut rng, 0.5)?;
    let batch = seeds.batch(0, Purpose::Forward, n_paths);
    let grad = estimate_gradient(model, &g, cost, &batch)?;
    let dual_paths = n_paths.min(4);
    let mut directions = Vec::with_capacity(n_dirs);
    let mut duality_gaps = Vec::with_capacity(n_dirs * dual_paths);
    for _ in 0..n_dirs {
        let dir = random_smooth_field(model, &mut rng, 1.0)?;
        directions.push(directional_check(
            model, &g, cost, &batch, &grad, &dir, fd_step,
        )?);
        for s in &batch.streams[..dual_paths] {
            let path = model.simulate_path(&g, &seeds, *s)?;
            duality_gaps.push(duality_gap(model, &path, cost, &dir, pairing)?);
        }
    }
    let max_fd_error = directions
        .iter()
        .map(|d| d.relative_error)
        .fold(0.0, f64::max);
    let max_duality_gap = duality_gaps.iter().copied().fold(0.0, f64::max);
    Ok(GradcheckReport {
        fd_step,
        n_paths,
        directions,
        duality_gaps,
        pairing,
        max_fd_error,
        max_duality_gap,
        passed: max_fd_error <= FD_TOLERANCE && max_duality_gap <= DUALITY_TOLERANCE,
    })
}

/// Mean and standard error of `J(a) - J(b)` path by path on common noise.
pub fn paired_difference(
    model: &Model,
    cost: &CompiledCost,
    a: &ControlField,
    b: &ControlField,
    seeds: &SeedBatch,
) -> Result<MeanEstimate> {
    let mut diffs = Vec::with_capacity(seeds.len());
    for_each_path(
        &seeds.streams,
        |s| {
            let pa = model.simulate_path(a, &seeds.policy, s)?;
            let pb = model.simulate_path(b, &seeds.policy, s)?;
            Ok(pathwise_cost(model, &pa, a, cost)?.total
                - pathwise_cost(model, &pb, b, cost)?.total)
        },
        |d| diffs.push(d),
    )?;
    Ok(MeanEstimate::from_samples(&diffs))
}
