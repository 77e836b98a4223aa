//! Collaborative crowdsourcing analysis for residential energy usage:
//! answer matrices, outcome construction, stepwise linear audits, random
//! forests with null-model validation, rank cutoffs and a dataset simulator.

pub mod audit;
pub mod cutoff;
pub mod domain;
pub mod error;
pub mod forest;
pub mod formats;
pub mod meter;
pub mod pipeline;
pub mod preprocess;
pub mod report;
pub mod seeds;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
