//! Walk-forward, population-based allocation engine.
//!
//! A population of linear timing agents is aggregated through a
//! multiplicative-weights meta-strategy, post-processed into an execution-aware
//! position, selected on validation data under explicit risk constraints, and
//! evaluated out of sample window by window. The statistics module supplies the
//! data-snooping-aware test suite used to compare runs.

pub mod baselines;
pub mod bundle;
pub mod config;
pub mod error;
pub mod execution;
pub mod features;
pub mod game;
pub mod league;
pub mod metrics;
pub mod numeric;
pub mod panel;
pub mod policy;
pub mod population;
pub mod rng;
pub mod signalproc;
pub mod stats;
pub mod synthetic;
pub mod walkforward;

pub use error::{Error, Result};
