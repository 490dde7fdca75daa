//! Command-line front end: configuration handling and experiment dispatch.

pub mod config;
pub mod run;
