//! Sequential Bayesian test planning for accelerated life tests of fibre
//! composites.
//!
//! Each recommended test stress comes from averaging an optimality criterion
//! over posterior draws: D-optimality (log-determinant of the expected
//! information) for the first runs of a campaign, then C-optimality (use-profile
//! weighted asymptotic variance of a log lifetime quantile) for the rest.

pub mod design;
pub mod distributions;
pub mod error;
pub mod fatigue_model;
pub mod fisher_info;
pub mod io;
pub mod likelihood;
pub mod posterior;
pub mod quadrature;
pub mod sim_harness;
pub mod simplex;

pub mod cli;

pub use distributions::DistributionFamily;
pub use error::{Error, Result};
pub use fatigue_model::{ModelParams, TestConfig};
pub use likelihood::{Dataset, Observation};
