//! Deterministic desk-scale simulator for federated learning with DP-FTRL
//! tree aggregation, adaptive clipping, SecAgg-style quantized aggregation
//! and participation-aware zCDP accounting.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accountant;
pub mod clip;
pub mod federation;
pub mod harness;
pub mod secagg;
pub mod tree;
pub mod vector;
