//! Configuration-driven experiments on top of `epinet_core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod casestudy;
pub mod cli;
pub mod config;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod ingest;
pub mod moments_check;
pub mod report;
pub mod stats;

pub use error::{HarnessError, Result};
