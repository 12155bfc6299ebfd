//! Predefined experiment matrices.

use crate::config::{ConfigError, ExperimentConfig};

pub const NAMES: [&str; 3] = ["smoke", "acceptance", "full"];

/// The config text of a named suite.
pub fn source(name: &str) -> Option<&'static str> {
    match name {
        "smoke" => Some(include_str!("../suites/smoke.json")),
        "acceptance" => Some(include_str!("../suites/acceptance.json")),
        "full" => Some(include_str!("../suites/full.json")),
        _ => None,
    }
}

pub fn config(name: &str) -> Option<Result<ExperimentConfig, ConfigError>> {
    source(name).map(ExperimentConfig::parse)
}
