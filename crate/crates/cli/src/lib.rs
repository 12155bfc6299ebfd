//! Config-driven experiment runner behind the `lab` binary.

pub mod config;
pub mod report;
pub mod runner;
pub mod suite;
