//! Particle Gibbs inference for latent factor GARCH models.
//!
//! Observations follow `y_t = β f_t + ε_t` with GARCH(1,1) factor variances,
//! optional GARCH-in-mean factor premia and constant or GARCH idiosyncratic
//! variances. Factors are drawn by conditional SMC on the fully adapted
//! particle filter; static parameters by conjugate and adaptive Metropolis
//! updates; the number of factors by reversible jump.
//!
//! [`driver::Chain`] runs one chain, [`experiments`] replicates designs and
//! selects the number of factors, and [`cli`] exposes both on the command line.

// Negated comparisons are used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop, clippy::too_many_arguments, clippy::type_complexity)]

pub mod cli;
pub mod columns;
pub mod config;
pub mod diagnostics;
pub mod driver;
pub mod error;
pub mod experiments;
pub mod kernels;
pub mod model;
pub mod panel;
pub mod particle;
pub mod rjmcmc;
pub mod rng;
pub mod samplers;

pub use error::{Error, Result};
