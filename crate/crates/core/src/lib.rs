//! Event-triggered, compressed decentralized SGD.
//!
//! The crate simulates a synchronous network of workers that take local
//! stochastic gradient steps, periodically check a triggering condition, and
//! exchange compressed corrections to publicly replicated parameter
//! estimates before taking a consensus step. Baselines (compressed gossip
//! SGD communicating every iteration, exact decentralized SGD, centralized
//! mini-batch SGD) share the same objectives, RNG streams and run logs so
//! that trajectories and bit budgets are directly comparable.
//!
//! Module map:
//!
//! * [`mixing_graph`]: topologies, doubly stochastic mixing matrices, spectral
//!   gap and the consensus step-size.
//! * [`compression`]: compression operators, their contraction parameter and
//!   a wire-cost model.
//! * [`objectives`]: local objectives with stochastic gradient oracles.
//! * [`schedule`] and [`sparq`]: the algorithm's schedules and state machine.
//! * [`baselines`]: comparison algorithms and an independent reference
//!   implementation used for equivalence checks.
//! * [`harness`]: run logs, audits, bit/accuracy comparison and rate fits.
//! * [`config`] and [`cli`]: declarative experiment configuration and the
//!   subcommands behind the `sparq` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod cli;
pub mod compression;
pub mod config;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mixing_graph;
pub mod objectives;
pub mod rng;
pub mod schedule;
pub mod sparq;

pub use error::{Error, Result};
