//! Propagation of probability densities for stochastic differential
//! equations as weighted scattered point clouds.
//!
//! Particles move by Euler–Maruyama; their weights are updated by an
//! entropically regularized Wasserstein proximal step (a Sinkhorn-like
//! fixed-point iteration), so the weights track the density at the moving
//! points without any spatial grid.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cloud;
pub mod energy;
pub mod error;
pub mod models;
pub mod pipeline;
pub mod prox;
pub mod sde;

pub use cloud::{ParticleCloud, SimplexWeights, StateMatrix};
pub use error::{Error, Result};
pub use prox::{prox_recur, ProxConfig, ProxReport};
