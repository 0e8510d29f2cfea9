//! Alternating forward/inverse world-model training over enumerable worlds.
//!
//! A forward world model `P(y | x, z)` and an inverse dynamics model
//! `Q(z | x, y)` take turns as policy and reward. Both are tabular
//! conditional categoricals, so every objective the loop optimises
//! (the variational CMI bound in the forward phase, the ELBO in the inverse
//! phase) can be computed exactly by enumeration and checked against
//! brute-force oracles.
//!
//! Module map:
//! - [`worldgen`]: synthetic transition kernels and state-only datasets.
//! - [`policy`]: logit-table categoricals, sampling, score gradients, KL.
//! - [`grpo`]: group-relative advantages and the KL-regularised update.
//! - [`swirl`]: the two-phase orchestration loop.
//! - [`analysis`]: exact CMI, bounds, ELBO, posteriors and accuracies.
//! - [`oracle`]: independent gradient and estimator verifiers.
//! - [`config`], [`checkpoint`], [`metrics`]: persistence and configuration.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod grpo;
pub mod metrics;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod swirl;
pub mod verify;
pub mod worldgen;

pub use error::{Result, SwirlError};

/// Index of a state in `0..num_states`.
pub type StateId = usize;
/// Index of a (latent) action in `0..num_actions`.
pub type ActionId = usize;
/// Two-index context of a conditional table: `(x, z)` for the forward model,
/// `(x, y)` for the inverse model.
pub type Context = (usize, usize);
