//! Simulation-free score and flow matching for Schrödinger bridges.
//!
//! The crate learns stochastic dynamics between empirical distributions by
//! regressing two networks onto closed-form Brownian-bridge targets: a
//! probability-flow drift and a score. Pairs of endpoints come from a static
//! (entropic or exact) optimal transport coupling, so training never
//! simulates the learned process.
//!
//! Module map:
//!
//! * [`datasets`] toy distributions, a sparse gene-dynamics simulator, CSV IO
//! * [`ot`] cost matrices, exact / entropic solvers, coupling sampling
//! * [`bridge`] conditional Brownian-bridge means, flows, scores, weights
//! * [`net`] SELU MLPs with hand-written backprop, the NGM drift, AdamW
//! * [`train`] pairwise, multi-marginal and looped training loops
//! * [`sim`] Euler–Maruyama / Euler integration forward and backward in time
//! * [`eval`] Wasserstein distances, path energy, Gaussian bridge oracle, GRN metrics
//! * [`experiment`] config-driven protocols used by the command line runner
//!
//! With the default `parallel` feature, batched network evaluation, path
//! simulation and cost construction run on rayon. Work is always split into
//! fixed-size chunks and reduced in order, so results are bit-identical to
//! the sequential build.

// `!(x >= 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bridge;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod net;
pub mod ot;
pub mod par;
pub mod rng;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
