//! Competitive retail-pricing marketplace and multi-agent RL benchmark.
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod algos;
pub mod calibration;
pub mod harness;
pub mod market;
pub mod metrics;
pub mod nn;
