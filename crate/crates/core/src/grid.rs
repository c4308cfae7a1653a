//! Uniform node-centered 1D grid with homogeneous Neumann closure.
//!
//! Boundary nodes are part of the grid; the Laplacian mirrors ghost values
//! (`u[-1] = u[1]`, `u[n] = u[n-2]`). Inner products use trapezoid weights,
//! which is exactly the weighting that makes the mirrored-ghost Laplacian
//! self-adjoint: `inner_l2(lap u, v) == inner_l2(u, lap v)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
}

impl SpatialGrid {
    pub fn new(x_min: f64, x_max: f64, n_cells: usize) -> Result<Self> {
        let grid = SpatialGrid {
            x_min,
            x_max,
            n_cells,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cells < 3 {
            return Err(Error::contract(format!(
                "grid needs at least 3 nodes, got {}",
                self.n_cells
            )));
        }
        if !(self.x_min.is_finite() && self.x_max.is_finite() && self.x_max > self.x_min) {
            return Err(Error::contract(format!(
                "grid bounds must be finite with x_max > x_min, got [{}, {}]",
                self.x_min, self.x_max
            )));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_cells - 1) as f64
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn node(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_cells).map(move |i| self.node(i))
    }

    /// Trapezoid quadrature weight of node `i`.
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n_cells {
            0.5 * self.dx()
        } else {
            self.dx()
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n_cells {
            return Err(Error::contract(format!(
                "field length {len} does not match grid with {} nodes",
                self.n_cells
            )));
        }
        Ok(())
    }

    /// The system `I - dt * lap` used by every implicit step.
    pub fn implicit_diffusion(&self, dt: f64) -> TridiagonalSystem {
        let n = self.n_cells;
        let r = dt / (self.dx() * self.dx());
        let mut lower = vec![-r; n];
        let diag = vec![1.0 + 2.0 * r; n];
        let mut upper = vec![-r; n];
        lower[0] = 0.0;
        upper[n - 1] = 0.0;
        // mirrored ghosts double the single neighbour at each wall
        upper[0] = -2.0 * r;
        lower[n - 1] = -2.0 * r;
        TridiagonalSystem { lower, diag, upper }
    }
}

/// Returns `lap_h u` with the mirrored-ghost Neumann stencil.
pub fn apply_neumann_laplacian(u: &[f64], grid: &SpatialGrid) -> Result<Vec<f64>> {
    grid.check_len(u.len())?;
    let n = u.len();
    let inv_dx2 = 1.0 / (grid.dx() * grid.dx());
    let mut out = vec![0.0; n];
    out[0] = 2.0 * (u[1] - u[0]) * inv_dx2;
    for i in 1..n - 1 {
        out[i] = (u[i - 1] - 2.0 * u[i] + u[i + 1]) * inv_dx2;
    }
    out[n - 1] = 2.0 * (u[n - 2] - u[n - 1]) * inv_dx2;
    Ok(out)
}

/// Trapezoid approximation of the L2(domain) pairing.
pub fn inner_l2(u: &[f64], v: &[f64], grid: &SpatialGrid) -> Result<f64> {
    grid.check_len(u.len())?;
    grid.check_len(v.len())?;
    Ok(weighted_dot(u, v, grid))
}

fn weighted_dot(u: &[f64], v: &[f64], grid: &SpatialGrid) -> f64 {
    let n = u.len();
    let interior: f64 = u[1..n - 1]
        .iter()
        .zip(&v[1..n - 1])
        .map(|(a, b)| a * b)
        .sum();
    grid.dx() * (0.5 * u[0] * v[0] + interior + 0.5 * u[n - 1] * v[n - 1])
}

/// Discrete L2([0,T] x domain) norm of a sequence of snapshots sampled at
/// uniform spacing `dt`, trapezoid rule in time.
pub fn spacetime_norm(slices: &[Vec<f64>], dt: f64, grid: &SpatialGrid) -> Result<f64> {
    if slices.is_empty() {
        return Err(Error::contract("spacetime_norm of an empty sequence"));
    }
    let last = slices.len() - 1;
    let mut acc = 0.0;
    for (k, s) in slices.iter().enumerate() {
        let w = if last > 0 && (k == 0 || k == last) {
            0.5
        } else {
            1.0
        };
        acc += w * inner_l2(s, s, grid)?;
    }
    // a single snapshot carries no time extent
    if last == 0 {
        return Ok(0.0);
    }
    Ok((dt * acc).sqrt())
}

/// Spatial support of a problem: a proper interval, or a single point for
/// ordinary SDE problems (no diffusion, unit quadrature weight).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Interval(SpatialGrid),
    Point,
}

impl Domain {
    pub fn n_nodes(&self) -> usize {
        match self {
            Domain::Interval(g) => g.n_cells,
            Domain::Point => 1,
        }
    }

    pub fn grid(&self) -> Option<&SpatialGrid> {
        match self {
            Domain::Interval(g) => Some(g),
            Domain::Point => None,
        }
    }

    pub fn node(&self, i: usize) -> f64 {
        match self {
            Domain::Interval(g) => g.node(i),
            Domain::Point => 0.0,
        }
    }

    pub fn weight(&self, i: usize) -> f64 {
        match self {
            Domain::Interval(g) => g.weight(i),
            Domain::Point => 1.0,
        }
    }

    /// Measure of the domain (1 for a point).
    pub fn measure(&self) -> f64 {
        match self {
            Domain::Interval(g) => g.length(),
            Domain::Point => 1.0,
        }
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        match self {
            Domain::Interval(g) => g.check_len(len),
            Domain::Point if len == 1 => Ok(()),
            Domain::Point => Err(Error::contract(format!(
                "point domain expects 1 value, got {len}"
            ))),
        }
    }

    /// Unchecked weighted pairing; callers guarantee lengths.
    pub(crate) fn dot(&self, u: &[f64], v: &[f64]) -> f64 {
        match self {
            Domain::Interval(g) => weighted_dot(u, v, g),
            Domain::Point => u[0] * v[0],
        }
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        self.check_len(u.len())?;
        self.check_len(v.len())?;
        Ok(self.dot(u, v))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TridiagonalSystem {
    /// `lower[0]` is unused.
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    /// `upper[n-1]` is unused.
    pub upper: Vec<f64>,
}

impl TridiagonalSystem {
    pub fn identity(n: usize) -> Self {
        TridiagonalSystem {
            lower: vec![0.0; n],
            diag: vec![1.0; n],
            upper: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * v[i];
                if i > 0 {
                    s += self.lower[i] * v[i - 1];
                }
                if i + 1 < n {
                    s += self.upper[i] * v[i + 1];
                }
                s
            })
            .collect()
    }

    pub fn factor(&self) -> Result<TridiagonalFactor> {
        TridiagonalFactor::new(self)
    }
}

/// Forward-elimination coefficients of a tridiagonal system, reusable for
/// any number of right-hand sides.
#[derive(Clone, Debug)]
pub struct TridiagonalFactor {
    lower: Vec<f64>,
    upper_mod: Vec<f64>,
    inv_pivot: Vec<f64>,
}

impl TridiagonalFactor {
    fn new(sys: &TridiagonalSystem) -> Result<Self> {
        let n = sys.len();
        if sys.lower.len() != n || sys.upper.len() != n || n == 0 {
            return Err(Error::contract(
                "tridiagonal bands must share a nonzero length",
            ));
        }
        let mut upper_mod = vec![0.0; n];
        let mut inv_pivot = vec![0.0; n];
        for i in 0..n {
            let pivot = if i == 0 {
                sys.diag[0]
            } else {
                sys.diag[i] - sys.lower[i] * upper_mod[i - 1]
            };
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(Error::Numerical(format!(
                    "zero pivot in tridiagonal row {i}"
                )));
            }
            inv_pivot[i] = 1.0 / pivot;
            if i + 1 < n {
                upper_mod[i] = sys.upper[i] * inv_pivot[i];
            }
        }
        Ok(TridiagonalFactor {
            lower: sys.lower.clone(),
            upper_mod,
            inv_pivot,
        })
    }

    pub fn len(&self) -> usize {
        self.inv_pivot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inv_pivot.is_empty()
    }

    /// Overwrites `rhs` with the solution.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        debug_assert_eq!(n, self.len());
        rhs[0] *= self.inv_pivot[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.lower[i] * rhs[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.upper_mod[i] * rhs[i + 1];
        }
    }
}

/// Thomas algorithm: one forward sweep, one back substitution, no pivoting.
pub fn solve_tridiagonal(sys: &TridiagonalSystem, rhs: &[f64]) -> Result<Vec<f64>> {
    if rhs.len() != sys.len() {
        return Err(Error::contract(format!(
            "rhs length {} does not match system size {}",
            rhs.len(),
            sys.len()
        )));
    }
    let factor = sys.factor()?;
    let mut out = rhs.to_vec();
    factor.solve_in_place(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize, a: f64, b: f64) -> SpatialGrid {
        SpatialGrid::new(a, b, n).unwrap()
    }

    #[test]
    fn laplacian_kills_constants() {
        let g = grid(17, 0.0, 20.0);
        let out = apply_neumann_laplacian(&[7.0; 17], &g).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn laplacian_three_point_hand_value() {
        let g = grid(3, 0.0, 2.0);
        assert_eq!(
            apply_neumann_laplacian(&[0.0, 1.0, 0.0], &g).unwrap(),
            vec![2.0, -2.0, 2.0]
        );
    }

    #[test]
    fn laplacian_neumann_eigenfunction() {
        let l = 20.0;
        let k = std::f64::consts::PI / l;
        let mut errs = Vec::new();
        for n in [101usize, 201, 401] {
            let g = grid(n, 0.0, l);
            let u: Vec<f64> = g.nodes().map(|x| (k * x).cos()).collect();
            let lu = apply_neumann_laplacian(&u, &g).unwrap();
            let err = lu
                .iter()
                .zip(&u)
                .map(|(a, b)| (a + k * k * b).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        // second order: halving dx quarters the error
        assert!(
            errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5,
            "{errs:?}"
        );
        assert!(errs[2] < 1e-5);
    }

    #[test]
    fn laplacian_length_mismatch() {
        let g = grid(5, 0.0, 1.0);
        assert!(matches!(
            apply_neumann_laplacian(&[1.0; 4], &g),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn tridiagonal_identity_and_hand_case() {
        let r = vec![1.5, -2.0, 3.0, 4.0];
        assert_eq!(
            solve_tridiagonal(&TridiagonalSystem::identity(4), &r).unwrap(),
            r
        );
        let sys = TridiagonalSystem {
            lower: vec![0.0, -1.0, -1.0],
            diag: vec![2.0, 2.0, 2.0],
            upper: vec![-1.0, -1.0, 0.0],
        };
        let v = solve_tridiagonal(&sys, &[1.0, 0.0, 1.0]).unwrap();
        for x in v {
            assert!((x - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn tridiagonal_zero_pivot_is_reported() {
        let sys = TridiagonalSystem {
            lower: vec![0.0, 1.0],
            diag: vec![0.0, 1.0],
            upper: vec![1.0, 0.0],
        };
        assert!(matches!(
            solve_tridiagonal(&sys, &[1.0, 1.0]),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn inner_product_examples() {
        let g = grid(41, 0.0, 20.0);
        let ones = vec![1.0; 41];
        assert!((inner_l2(&ones, &ones, &g).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(inner_l2(&ones, &vec![0.0; 41], &g).unwrap(), 0.0);
        let g = grid(101, 0.0, 1.0);
        let x: Vec<f64> = g.nodes().collect();
        // trapezoid error for x^2 is dx^2/6 = 1.67e-5
        assert!((inner_l2(&x, &x, &g).unwrap() - 1.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn spacetime_norm_examples() {
        let g = grid(41, 0.0, 20.0);
        let zero = vec![vec![0.0; 41]; 11];
        assert_eq!(spacetime_norm(&zero, 1.5, &g).unwrap(), 0.0);
        let ones = vec![vec![1.0; 41]; 11];
        assert!((spacetime_norm(&ones, 1.5, &g).unwrap() - 300f64.sqrt()).abs() < 1e-12);
        let g = grid(11, 0.0, 1.0);
        let n_t = 200;
        let slices: Vec<Vec<f64>> = (0..=n_t).map(|k| vec![k as f64 / n_t as f64; 11]).collect();
        let v = spacetime_norm(&slices, 1.0 / n_t as f64, &g).unwrap();
        assert!((v - (1.0f64 / 3.0).sqrt()).abs() < 1e-4);
        assert!(spacetime_norm(&[], 1.0, &g).is_err());
    }

    proptest! {
        #[test]
        fn summation_by_parts(seed in prop::collection::vec(-1.0f64..1.0, 2 * 23)) {
            let g = grid(23, -3.0, 4.0);
            let (u, v) = seed.split_at(23);
            let lhs = inner_l2(&apply_neumann_laplacian(u, &g).unwrap(), v, &g).unwrap();
            let rhs = inner_l2(u, &apply_neumann_laplacian(v, &g).unwrap(), &g).unwrap();
            let scale = lhs.abs().max(rhs.abs()).max(1.0);
            prop_assert!((lhs - rhs).abs() / scale < 1e-12);
        }

        #[test]
        fn tridiagonal_solve_inverts_apply(
            n in 3usize..40,
            seed in prop::collection::vec(-1.0f64..1.0, 4 * 40),
        ) {
            let lower: Vec<f64> = seed[..n].to_vec();
            let upper: Vec<f64> = seed[40..40 + n].to_vec();
            let diag: Vec<f64> = (0..n)
                .map(|i| (lower[i].abs() + upper[i].abs() + 0.1 + seed[80 + i].abs()) * seed[120 + i].signum())
                .map(|d| if d == 0.0 { 1.0 } else { d })
                .collect();
            let sys = TridiagonalSystem { lower, diag, upper };
            let rhs: Vec<f64> = (0..n).map(|i| seed[(7 * i + 3) % 160] + 0.5).collect();
            let v = solve_tridiagonal(&sys, &rhs).unwrap();
            let back = sys.apply(&v);
            let rmax = rhs.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
            let res = back.iter().zip(&rhs).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            prop_assert!(res / rmax <= 1e-12);
        }
    }
}
