//! Configuration and campaign runner behind the `ichaos` binary.

pub mod config;
pub mod run;
