//! Q-Wiener increments from a truncated cosine Karhunen-Loeve expansion, and
//! scalar Brownian increments for point problems.
//!
//! Every random draw comes from a stream addressed by
//! `(run_seed, iteration, path, purpose)`. The run seed keys a ChaCha12
//! generator and the remaining labels select its 64-bit stream number, so a
//! tuple always replays the same numbers no matter which thread asks or in
//! which order.

use std::f64::consts::PI;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Domain, SpatialGrid};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceSpec {
    pub n_modes: usize,
    /// Eigenvalues decay as `(1 + k^2)^(-decay)`.
    pub decay: f64,
    /// Additive noise amplitude (sigma); applied by the solver.
    pub amplitude: f64,
}

impl Default for CovarianceSpec {
    fn default() -> Self {
        CovarianceSpec {
            n_modes: 32,
            decay: 1.0,
            amplitude: 0.0,
        }
    }
}

impl CovarianceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.5) {
            return Err(Error::config(format!(
                "noise decay exponent must exceed 1/2, got {}",
                self.decay
            )));
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(Error::config(format!(
                "noise amplitude must be finite and >= 0, got {}",
                self.amplitude
            )));
        }
        Ok(())
    }

    pub fn eigenvalue(&self, k: usize) -> f64 {
        (1.0 + (k * k) as f64).powf(-self.decay)
    }
}

/// Cosine eigenfunction `e_k` of the Neumann Laplacian, orthonormal in L2.
pub fn neumann_mode(k: usize, x: f64, grid: &SpatialGrid) -> f64 {
    let l = grid.length();
    if k == 0 {
        1.0 / l.sqrt()
    } else {
        (2.0 / l).sqrt() * (k as f64 * PI * (x - grid.x_min) / l).cos()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    /// Paths feeding gradient estimates.
    Forward,
    /// Paths used for accept/reject cost comparisons.
    Evaluation,
    /// Reserved batches never seen by the optimizer.
    Holdout,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Forward => 0,
            Purpose::Evaluation => 1,
            Purpose::Holdout => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StreamId {
    pub iteration: u32,
    pub path: u32,
    pub purpose: Purpose,
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {:?})", self.iteration, self.path, self.purpose)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPolicy {
    pub run_seed: u64,
}

impl SeedPolicy {
    pub fn new(run_seed: u64) -> Self {
        SeedPolicy { run_seed }
    }

    pub fn rng(&self, id: StreamId) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.run_seed);
        // 32 bits of iteration, 30 of path index, 2 of purpose
        let stream = (u64::from(id.iteration) << 32)
            | (u64::from(id.path & 0x3fff_ffff) << 2)
            | id.purpose.tag();
        rng.set_stream(stream);
        rng
    }

    pub fn batch(&self, iteration: u32, purpose: Purpose, n_paths: usize) -> SeedBatch {
        SeedBatch {
            policy: *self,
            streams: (0..n_paths as u32)
                .map(|path| StreamId {
                    iteration,
                    path,
                    purpose,
                })
                .collect(),
        }
    }
}

/// An ordered set of stream tuples sharing one run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedBatch {
    pub policy: SeedPolicy,
    pub streams: Vec<StreamId>,
}

impl SeedBatch {
    pub fn len(&self) -> usize {
        self.streams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streams.is_empty()
    }
}

/// Pre-sampled `sqrt(q_k) e_k(x_i)` table for one grid.
#[derive(Clone, Debug)]
pub struct NoiseBasis {
    modes: Vec<Vec<f64>>,
    point: bool,
}

impl NoiseBasis {
    pub fn new(spec: &CovarianceSpec, domain: &Domain) -> Self {
        match domain {
            Domain::Interval(grid) => {
                let modes = (0..spec.n_modes)
                    .map(|k| {
                        let s = spec.eigenvalue(k).sqrt();
                        grid.nodes().map(|x| s * neumann_mode(k, x, grid)).collect()
                    })
                    .collect();
                NoiseBasis {
                    modes,
                    point: false,
                }
            }
            Domain::Point => NoiseBasis {
                modes: Vec::new(),
                point: true,
            },
        }
    }

    /// Fills `out` with one increment over `dt` (unit amplitude).
    pub fn fill_increment<R: rand::Rng + ?Sized>(&self, dt: f64, rng: &mut R, out: &mut [f64]) {
        if self.point {
            out[0] = sample_scalar_increment(dt, rng);
            return;
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        let sdt = dt.sqrt();
        for mode in &self.modes {
            let xi: f64 = StandardNormal.sample(rng);
            let c = xi * sdt;
            for (o, m) in out.iter_mut().zip(mode) {
                *o += c * m;
            }
        }
    }

    /// Covariance `Cov(dW(x_i), dW(x_j)) / dt` of the truncated expansion.
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        if self.point {
            return 1.0;
        }
        self.modes.iter().map(|m| m[i] * m[j]).sum()
    }
}

pub fn sample_qwiener_increment<R: rand::Rng + ?Sized>(
    spec: &CovarianceSpec,
    grid: &SpatialGrid,
    dt: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::contract(format!("increment needs dt > 0, got {dt}")));
    }
    let basis = NoiseBasis::new(spec, &Domain::Interval(*grid));
    let mut out = vec![0.0; grid.n_cells];
    basis.fill_increment(dt, rng, &mut out);
    Ok(out)
}

/// `N(0, dt)`; `dt = 0` returns exactly zero.
pub fn sample_scalar_increment<R: rand::Rng + ?Sized>(dt: f64, rng: &mut R) -> f64 {
    let xi: f64 = StandardNormal.sample(rng);
    xi * dt.sqrt()
}
