//! Predictor-feedback delay compensation for nonlinear systems with several
//! input channels, each with its own delay.

pub mod bench;
pub mod cascade;
pub mod dataset;
pub mod error;
pub mod interp;
pub mod neural;
pub mod predictor;
mod rng;
pub mod system;
pub mod systems;
pub mod verify;

pub use error::{Error, Result};
