//! Bias measurement and latent-space rebalancing for collections of
//! generated face samples.
//!
//! A dataset is a set of latent vectors with gender, age and quality labels
//! supplied by an [`oracles::Oracle`]. [`metrics`] quantifies imbalance,
//! [`planner`] builds and executes a two-phase sampling plan using the line
//! and sphere samplers in [`samplers`], and [`io`] reads and writes the
//! on-disk formats.

pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod oracles;
pub mod planner;
pub mod rng;
pub mod samplers;

pub use error::{Error, Result};
