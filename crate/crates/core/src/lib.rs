//! Quasi-steady-state power-flow time series with a clustered regression
//! surrogate standing in for most Newton-Raphson solves.
//!
//! The pieces, bottom up:
//!
//! - [`netmodel`]: per-unit networks and the admittance matrix.
//! - [`solver`]: Newton-Raphson power flow plus a Gauss-Seidel cross-check.
//! - [`loadgen`]: seeded synthetic load series with weekly operating modes.
//! - [`dataset`]: the `(p, q, v, a)` CSV format and chronological splits.
//! - [`surrogate`]: K-Means / day-of-week clustering with per-cluster least squares.
//! - [`metrics`]: per-bus normalized complex-voltage error and its max over buses.
//! - [`hybrid`]: the per-step model/solver decision with its three checks.
//! - [`tuning`]: threshold sweeps and configuration recommendation.
//! - [`report`]: run summaries and histogram / time-series CSVs.
//! - [`config`]: the TOML run configuration consumed by the CLI.

// `!(x < t)` is used on purpose so that NaN fails closed.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod hybrid;
pub mod loadgen;
pub mod metrics;
pub mod netmodel;
pub mod report;
pub mod solver;
pub mod surrogate;
pub mod tuning;

pub use netmodel::Network;
pub use solver::{SolverSettings, VoltageSolution};
