//! Identification of a daily, piecewise-constant infection rate for the SIR
//! model from cumulative case counts, and rolling evaluation of frozen-rate
//! forecasts made with the identified model.
//!
//! - [`model`]: SIR types and fixed-step RK4 integration.
//! - [`calibration`]: least-squares objective, bounded optimizer and the
//!   coarse-to-fine (dyadic) fitting driver.
//! - [`data`]: case-record ingestion, daily aggregation, synthetic datasets.
//! - [`forecast`]: frozen-rate forecasts, error tables and summaries.
//! - [`cli`]: the `sirtv` command line.

pub mod calibration;
pub mod cli;
pub mod config;
pub mod data;
mod error;
pub mod forecast;
pub mod model;

pub use error::{Error, ErrorKind, Result};
