//! Doubly robust treatment-effect estimators that stay stable under weak
//! covariate overlap.
//!
//! Each moment of a ratio `E[B/A]` is estimated by trimming observations with
//! `|A| < h` and adding back a Taylor-series estimate of the trimmed mass,
//! built from derivatives at zero of a Legendre sieve regression of `B` on
//! `A`. Standard errors come from the corresponding influence functions.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod did_inference;
pub mod error;
pub mod estimands;
pub mod first_stage;
pub mod legendre;
pub mod numkit;
pub mod sieve;
pub mod simulation;
pub mod trim_core;

pub use error::{Error, Result};
