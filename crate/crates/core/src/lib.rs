//! Measured-state stochastic MPC for linear systems with additive noise.
//!
//! The crate is organized bottom-up:
//!
//! * [`model`]: plant, polytopes, ellipsoids.
//! * [`lqr`]: the prestabilizing gain and terminal weight.
//! * [`offline`]: probabilistic reachable set design and its checks.
//! * [`socp`]: a small conic interior-point solver.
//! * [`controller`]: the relaxed optimal-control problem and its theory helpers.
//! * [`baseline`]: the dual-mode IS-SMPC comparison controller.
//! * [`sim`]: seeded Monte-Carlo closed-loop simulation and statistics.
//! * [`cli`]: configuration files, artifacts and report writers behind the `mssmpc` binary.

pub mod baseline;
pub mod cli;
pub mod benchmark;
pub mod controller;
pub mod error;
pub mod linalg;
pub mod lqr;
pub mod model;
pub mod offline;
pub mod sim;
pub mod socp;
pub mod special;

pub use error::{Error, Result};
