//! Worst-case optimal transmit antenna deployment for indoor wireless power
//! transfer under the spherical-wavefront (near-field) channel model:
//! geometry, channels, the max-min solver and its optimality certificate,
//! benchmark schemes, and reproducible experiments.

mod error;

pub mod certificate;
pub mod channel;
pub mod experiments;
pub mod geometry;
pub mod schemes;
pub mod solver;

pub use error::{Error, Result};
