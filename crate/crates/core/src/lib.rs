//! One-step early stopping for single-hidden-layer networks trained by
//! full-batch gradient descent.
//!
//! The crate computes the neural tangent kernel spectrum at initialization,
//! derives a stopping time and a probabilistic upper bound on the population
//! loss after one descent step, and ships a Van der Pol MPC-imitation
//! benchmark to exercise the whole pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod certificate;
pub mod error;
pub mod ntk;
pub mod numlin;
pub mod shallow_net;
pub mod vdp_mpc;

pub use error::{Error, Result};
