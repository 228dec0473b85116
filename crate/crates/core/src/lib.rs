//! Simulation, control synthesis and evaluation for landing a
//! velocity-commanded multirotor on a moving boat.

pub mod config;
pub mod controller;
pub mod error;
pub mod experiments;
pub mod mission;
pub mod mlp;
pub mod perception;
pub mod pso;
pub mod sim;
pub mod training;

pub use error::{Error, Result};
