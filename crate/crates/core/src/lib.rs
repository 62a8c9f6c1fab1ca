//! Imputation and prediction benchmarks for longitudinal clinical records.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod data;
pub mod error;
pub mod impute;
pub mod linalg;
pub mod metrics;
pub mod predict;
pub mod rng;
pub mod synth;
pub mod tree;
