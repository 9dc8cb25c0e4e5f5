//! Bayesian inference for ordinal Markov random fields.
//!
//! The crate provides the full, pseudo- and empirical likelihoods of the ordinal
//! MRF, point estimators, the coordinate-rescaling machinery (CoRe / AdaCoRe),
//! baseline samplers (exact, pseudo, empirical, DMH, AdaDMH), post-hoc
//! calibration, synthetic data generation, and posterior comparison metrics.
//!
//! The crate is `no_std` with `alloc`; file formats, timing and parallel
//! orchestration live in the companion `omrf` crate.
#![cfg_attr(not(feature = "std"), no_std)]
// Index loops mirror the matrix formulas; `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod estimate;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod rescale;
pub mod samplers;
pub mod simulate;

pub use error::{Error, Result};
