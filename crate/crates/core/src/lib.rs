//! Gradient-free Bayesian experimental design for implicit simulator models.
//!
//! Designs are optimized by ascending a SMILE lower bound on the mutual
//! information between parameters and outcomes. The critic is trained with
//! Adam while the design moves along guided evolution strategy estimates, so
//! the simulator never needs to be differentiable.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bed;
pub mod error;
pub mod es;
pub mod mi;
pub mod models;
pub mod nn;
pub mod posterior;
pub mod rng;

pub use error::{Error, Result};
