pub mod baselines;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod rng;
pub mod tasks;

pub use error::{Error, Result};
