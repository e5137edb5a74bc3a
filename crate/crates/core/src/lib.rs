//! Simulation and analysis of probit-space accuracy trends for linear
//! classifiers under distribution shift.

pub mod error;
pub mod filtering;
pub mod harness;
pub mod mixing;
pub mod numerics;
pub mod synthetic;
pub mod trend;

pub use error::{Error, Result};
