//! Mean-field linear-quadratic stochastic control with indefinite weights.
//!
//! The crate solves the coupled Riccati system for a problem given by
//! time-varying coefficients, checks the definiteness conditions that make
//! the problem well posed, applies relaxed compensators to shift the weights,
//! and verifies the resulting feedback laws by moment propagation and Monte
//! Carlo simulation.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::too_many_arguments,
    clippy::needless_range_loop
)]

pub mod compensator;
pub mod error;
pub mod examples;
pub mod export;
pub mod hamiltonian;
pub mod matrix;
pub mod problem;
pub mod random;
pub mod riccati;
pub mod schema;
pub mod simulation;
pub mod timefn;

pub use error::{Error, Result};
pub use timefn::{TimeFunction, TimeGrid};
