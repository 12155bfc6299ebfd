//! Experiment configuration files.
//!
//! A config is one JSON object with a `schema_version`, an optional output
//! directory and a list of experiments. Unknown fields are rejected, and
//! every random draw takes its seed from the file.

use caloric::{CoefficientField, DomainSpec, Extent, GridSpec, SpaceTimePoint};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("schema violation: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("schema violation: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub experiments: Vec<ExperimentSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Used for output file names; `[A-Za-z0-9_-]+`.
    pub name: String,
    pub domain: DomainSpec,
    pub field: CoefficientField,
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extent: Option<Extent>,
    /// Also run at `h/2` and report the relative change.
    #[serde(default = "yes")]
    pub refine: bool,
    /// Assertions on the headline constant at the finest grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Expect>,
    pub params: Experiment,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expect {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    /// Reference value, matched within `rel_tol`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSpec {
    pub paths: u64,
    pub seed: u64,
}

/// Bottom data for the quotient experiment, as a function of `|x|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Constant { value: f64 },
    Exp { rate: f64 },
    InverseSquare,
}

impl DataSpec {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
        match self {
            DataSpec::Constant { value } => *value,
            DataSpec::Exp { rate } => (-rate * r).exp(),
            DataSpec::InverseSquare => 1.0 / (1.0 + r * r),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    Measure {
        x: SpaceTimePoint,
        anchor: SpaceTimePoint,
        radii: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mc: Option<McSpec>,
    },
    DoublingWholespace {
        k: f64,
        r_list: Vec<f64>,
        t_list: Vec<f64>,
        x_per_t: usize,
    },
    DoublingLipschitz {
        anchor: SpaceTimePoint,
        k: f64,
        lambda: f64,
        r_list: Vec<f64>,
    },
    BottomBound {
        anchor: SpaceTimePoint,
        r: f64,
    },
    Oscillation {
        anchor: SpaceTimePoint,
        r: f64,
        draws: usize,
        seed: u64,
    },
    GrowthExponent {
        anchor: SpaceTimePoint,
        patch_r: f64,
        rho0: f64,
        big_r: f64,
    },
    BoundaryDecay {
        anchor: SpaceTimePoint,
        ks: Vec<f64>,
        rho0: f64,
        radii: Vec<f64>,
    },
    Harnack {
        delta: f64,
        lambda: f64,
        t_max: f64,
        draws: usize,
        seed: u64,
    },
    BackwardHarnack {
        x: Vec<f64>,
        t: f64,
        r: f64,
        delta: f64,
        draws: usize,
        seed: u64,
    },
    Quotient {
        anchor: SpaceTimePoint,
        k: f64,
        r: f64,
        data_u: DataSpec,
        data_v: DataSpec,
    },
    Aronson {
        t: f64,
        radius: f64,
    },
    GreenMeasure {
        anchor: SpaceTimePoint,
        rho_list: Vec<f64>,
        x: SpaceTimePoint,
    },
    InteriorDomination {
        anchor: SpaceTimePoint,
        rho: f64,
        k: f64,
        lambda: f64,
    },
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Measure { .. } => "measure",
            Experiment::DoublingWholespace { .. } => "doubling_wholespace",
            Experiment::DoublingLipschitz { .. } => "doubling_lipschitz",
            Experiment::BottomBound { .. } => "bottom_bound",
            Experiment::Oscillation { .. } => "oscillation",
            Experiment::GrowthExponent { .. } => "growth_exponent",
            Experiment::BoundaryDecay { .. } => "boundary_decay",
            Experiment::Harnack { .. } => "harnack",
            Experiment::BackwardHarnack { .. } => "backward_harnack",
            Experiment::Quotient { .. } => "quotient",
            Experiment::Aronson { .. } => "aronson",
            Experiment::GreenMeasure { .. } => "green_measure",
            Experiment::InteriorDomination { .. } => "interior_domination",
        }
    }

    fn points(&self) -> Vec<&[f64]> {
        match self {
            Experiment::Measure { x, anchor, .. } | Experiment::GreenMeasure { x, anchor, .. } => vec![&x.x, &anchor.x],
            Experiment::DoublingLipschitz { anchor, .. }
            | Experiment::BottomBound { anchor, .. }
            | Experiment::Oscillation { anchor, .. }
            | Experiment::GrowthExponent { anchor, .. }
            | Experiment::BoundaryDecay { anchor, .. }
            | Experiment::Quotient { anchor, .. }
            | Experiment::InteriorDomination { anchor, .. } => vec![&anchor.x],
            Experiment::BackwardHarnack { x, .. } => vec![x],
            _ => Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Checks everything that can be checked without solving.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.experiments.is_empty() {
            return bad("no experiments".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.experiments {
            let ctx = |m: String| ConfigError::Invalid(format!("experiment {:?}: {m}", e.name));
            if e.name.is_empty() || !e.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(ctx("name must match [A-Za-z0-9_-]+".into()));
            }
            if !seen.insert(e.name.clone()) {
                return Err(ctx("duplicate name".into()));
            }
            e.domain.validate().map_err(|err| ctx(err.to_string()))?;
            e.field.validate().map_err(|err| ctx(err.to_string()))?;
            let n = e.domain.dim();
            if e.field.dim() != n {
                return Err(ctx(format!("field dimension {} does not match domain dimension {n}", e.field.dim())));
            }
            if !(e.grid.h > 0.0 && e.grid.h.is_finite()) {
                return Err(ctx(format!("grid.h = {} must be positive", e.grid.h)));
            }
            if let Some(ext) = &e.extent {
                if ext.lo.len() != n || ext.hi.len() != n {
                    return Err(ctx("extent dimension does not match the domain".into()));
                }
            }
            if let Some(x) = &e.expect {
                if x.value.is_some() != x.rel_tol.is_some() {
                    return Err(ctx("expect.value and expect.rel_tol go together".into()));
                }
            }
            if e.params.points().iter().any(|p| p.len() != n) {
                return Err(ctx(format!("a point in params does not have dimension {n}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "experiments": [{
            "name": "ws",
            "domain": {"kind": "whole_space", "n": 1},
            "field": {"name": "identity", "n": 1, "nu": 1.0, "form": "div"},
            "grid": {"h": 0.05},
            "params": {"kind": "bottom_bound", "anchor": {"x": [0.0], "t": 0.0}, "r": 1.0}
        }]
    }"#;

    #[test]
    fn minimal_config_parses() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert!(c.experiments[0].refine);
        assert_eq!(c.experiments[0].params.kind(), "bottom_bound");
    }

    #[test]
    fn unknown_field_is_rejected() {
        let text = MINIMAL.replace("\"r\": 1.0", "\"r\": 1.0, \"radius\": 2.0");
        assert!(matches!(ExperimentConfig::parse(&text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn wrong_version_and_dimension_are_rejected() {
        let text = MINIMAL.replace("\"schema_version\": 1", "\"schema_version\": 7");
        assert!(matches!(ExperimentConfig::parse(&text), Err(ConfigError::Invalid(_))));
        let text = MINIMAL.replace("\"x\": [0.0]", "\"x\": [0.0, 1.0]");
        assert!(matches!(ExperimentConfig::parse(&text), Err(ConfigError::Invalid(_))));
    }
}
