//! Variance-reduced stochastic methods for finite-sum cocoercive variational
//! inequalities `F(z) = (1/n) Σ F_i(z) = 0`.
//!
//! - [`problems`]: operator abstraction, bilinear saddle-point instances,
//!   exact solutions and assumption checkers.
//! - [`solvers`]: SARAH with SVRG and SGD baselines, exact oracle accounting.
//! - [`analysis`]: cross-seed aggregation and empirical checks of the
//!   convergence bounds.
//! - [`harness`]: experiment configuration, orchestration, CSV and plots.

pub mod analysis;
pub mod harness;
pub mod linalg;
pub mod problems;
pub mod rng;
pub mod solvers;
