//! Numerical laboratory for the weakly asymmetric Ginzburg-Landau interface
//! model in height-difference variables.
//!
//! The crate simulates the periodic lattice SDE
//!
//! ```text
//! du(i) = { 1/2 Δ_D[V'(u)](i) + α ∇²_D[V'(u)](i) } dt + dW(i+1) - dW(i)
//! ```
//!
//! computes the full thermodynamics of its tilted product measures, and
//! provides the statistical machinery (canonical ensembles, Edgeworth
//! expansions, Boltzmann-Gibbs residual estimators, rescaled fluctuation
//! fields) needed to check its convergence toward the stochastic Burgers
//! equation against a built-in spectral reference solver.
//!
//! Start with the runnable programs in `examples/` — there is one per major
//! capability — or with the thin `lab` binary which drives the same
//! experiment pipelines from a TOML config.

pub mod dynamics;
pub mod ensembles;
pub mod error;
pub mod fluctuation;
pub mod harness;
pub mod potentials;
pub mod sbe;
pub mod thermo;

pub use error::{Error, Result};
pub use potentials::{Potential, Shape};
pub use thermo::ThermoProfile;
