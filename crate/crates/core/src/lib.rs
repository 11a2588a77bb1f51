//! Network-topology inference for meta-population epidemics from regional
//! case counts.
//!
//! The crate provides a stochastic SIR simulator on a mobility network,
//! first and second moments of the linearized process, Gaussian
//! likelihoods over observed time series, and estimators for the
//! transmission parameters and the neighbor matrix.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod estimate;
pub mod evaluation;
pub mod likelihood;
pub mod moments;
pub mod netgen;
pub mod registry;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
