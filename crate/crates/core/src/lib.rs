//! Exposure-response curve estimation for continuous exposures.
//!
//! The crate provides a simulation harness (covariate, exposure and outcome
//! generators), three regression outcome models, entropy balancing weights,
//! generalized-propensity-score caliper matching, bias/RMSE metrics and an
//! aggregated-rate application pipeline with block bootstrap bands.

pub mod application;
pub mod balance;
pub mod erc;
pub mod estimators;
pub mod error;
pub mod gps;
pub mod metrics;
pub mod regression;
pub mod scenario;
pub mod seed;
pub mod simulation;
pub mod stats;

pub use erc::{linspace, ErcEstimate};
pub use error::{ErcError, Result};
