//! Model predictive path integral control with learned and structured
//! input-noise samplers for an autonomous car.

pub mod costs;
pub mod dynamics;
pub mod error;
pub mod flow;
pub mod harness;
pub mod mppi;
pub mod path;
pub mod rng;
pub mod sampling;
pub mod scenario;
pub mod stats;
pub mod trainingdata;

pub use error::{Error, Result};
