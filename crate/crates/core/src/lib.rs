//! Reject-option binary classifiers trained with the double sigmoid loss.
//!
//! The crate covers the model ([`nn`]), its losses ([`losses`]), pointwise
//! calibration theory ([`calibration`]), norm-based generalization bounds
//! ([`bounds`]), data handling ([`data`]) and the training loop ([`training`]).
//! Batch work such as cross-validation sweeps goes through [`exec::Exec`],
//! which runs on rayon when the `parallel` feature is enabled and sequentially
//! otherwise; results never depend on the mode.

// `!(x > 0.0)` style checks are kept so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod calibration;
pub mod data;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
