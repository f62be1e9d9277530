//! Fan-beam CT reconstruction toolbox and benchmark harness.

pub mod dataio;
pub mod error;
pub mod geometry;
pub mod metrics;
mod par;
pub mod phantoms;
pub mod preprocess;
pub mod projector;
pub mod registry;
pub mod solvers;
pub mod tasks;

pub use error::{Error, Result};
