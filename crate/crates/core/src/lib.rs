//! Deterministic optimal control of 1D stochastic reaction-diffusion
//! equations by adjoint-based Monte Carlo gradients and nonlinear
//! conjugate gradient descent.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod cg;
pub mod checks;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod io;
pub mod noise;
pub mod objective;
pub mod scenarios;

pub use error::{Error, Result};
