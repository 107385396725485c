//! Configuration, orchestration and output for RCB experiments.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod run;

pub use config::{Mode, RunConfig};
pub use run::{execute, Artifacts};
