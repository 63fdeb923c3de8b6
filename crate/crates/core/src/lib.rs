//! Learning with augmented classes from labeled known-class data and
//! unlabeled test-distribution data.
//!
//! The crate provides the unbiased risk estimator for arbitrary multi-class
//! losses, the negative-risk penalty and its correction special cases, the
//! class-prior-shift estimator, linear/MLP score models trained with Adam,
//! kernel-mean-embedding estimation of the known-class proportion, and the
//! evaluation metrics used to compare methods.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data_model;
pub mod error;
pub mod evaluation;
pub mod loss;
pub mod methods;
pub mod models_optim;
pub mod mpe;
pub mod risk;

pub use error::{LacError, Result};
