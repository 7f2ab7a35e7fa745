//! Behavioral model of an early-shutdown double-tail dynamic comparator with
//! body-bias offset calibration.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod device;
pub mod engine;
pub mod geometry;
pub mod sizing;
pub mod calibration;
pub mod harness;
