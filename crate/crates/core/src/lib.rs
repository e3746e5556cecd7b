//! Stochastic linear bandits under stage-wise linear safety constraints.
//!
//! The crate simulates a learner that picks actions from a box, observes a
//! noisy linear reward and a noisy linear side measurement of an unknown
//! constraint, and must keep every action inside the (unknown) safe set.
//!
//! Layout:
//!
//! - [`linalg`]: online regularized least squares, weighted norms, matrix roots.
//! - [`confidence`]: confidence radii and safe-set margins.
//! - [`perturbation`]: the Thompson-sampling perturbation law and its checks.
//! - [`solver`]: safe action selection (box plus one second-order-cone constraint).
//! - [`environment`]: ground-truth instances, observations and regret accounting.
//! - [`policy`]: Safe-LTS, oracle LTS, dynamic Safe-LTS and the safe LUCB baselines.
//! - [`harness`]: seeded episodes, batches, the statistical verification suite
//!   and CSV/JSON output.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod confidence;
pub mod environment;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod perturbation;
pub mod policy;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
