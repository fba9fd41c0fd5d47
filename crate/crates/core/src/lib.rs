//! Numerical core for auditing model-selection risks in causal inference.
//!
//! The crate is `no_std` (it needs `alloc`) and holds everything that is pure
//! computation:
//!
//! - [`datagen`]: the Caussim generator, a two-Gaussian mixture with analytic
//!   propensities and RBF response surfaces,
//! - [`learners`]: ridge, L2 logistic regression, gradient-boosted trees,
//!   stacking and Platt calibration,
//! - [`candidates`]: S/T/Sft meta-learner outcome models and the candidate
//!   families they are ranked in,
//! - [`nuisance`]: fitted or oracle `(e, m)` nuisances with propensity clipping,
//! - [`risks`]: the six model-selection risks and the theory identities that
//!   tie the feasible ones to the oracle tau-risk,
//! - [`overlap`]: normalized total variation and overlap tertiles,
//! - [`selection`]: the train/test selection procedure and ranking agreement.
//!
//! File formats, configuration and campaign orchestration live in the
//! `causal-risk` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod candidates;
pub mod cv;
pub mod datagen;
pub mod dataset;
mod error;
pub mod learners;
mod linalg;
pub mod matrix;
pub mod nuisance;
pub mod overlap;
pub mod risks;
pub mod rng;
pub mod selection;

pub use dataset::{Dataset, Oracle};
pub use error::{Error, Result};
pub use matrix::Matrix;
