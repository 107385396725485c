//! Two-stage Bayesian incentive-compatible contextual bandit.
//!
//! The platform first runs an incentive-compatible cold start that collects
//! a fixed number of samples for every arm, then switches to epoch-based
//! exploitation with inverse-gap-weighted action sampling. Users are myopic
//! Bayesians who only follow a recommendation when it looks good enough
//! under their own beliefs.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod cold_start;
pub mod environment;
pub mod error;
pub mod exploitation;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod simulation;
pub mod warfarin;

pub use error::{RcbError, Result};

/// Index of the largest value; ties go to the lowest index.
///
/// Panics on an empty slice.
pub fn argmax(values: &[f64]) -> usize {
    assert!(!values.is_empty(), "argmax of an empty slice");
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
