//! Run-config document: one JSON file fully describes a run. The schema is
//! closed (unknown fields are rejected) so a typo like "Beta" cannot
//! silently fall back to a default and corrupt a study.

use hvdvg::{FitConfig, GridSpec, InoculumSpec, IntegratorConfig, ModelParams, Subject};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandName {
    Simulate,
    Scan,
    Cloud,
    Estimate,
    Sensitivity,
    Fit,
    Spectrum,
}

impl CommandName {
    pub fn as_str(&self) -> &'static str {
        match self {
            CommandName::Simulate => "simulate",
            CommandName::Scan => "scan",
            CommandName::Cloud => "cloud",
            CommandName::Estimate => "estimate",
            CommandName::Sensitivity => "sensitivity",
            CommandName::Fit => "fit",
            CommandName::Spectrum => "spectrum",
        }
    }
}

/// Sensitivity run: which derivative to follow, optional explicit sample
/// times, and optional finite-difference verification step sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityBlock {
    pub subject: Subject,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fd_steps: Vec<f64>,
}

/// Spectrum run: the state to diagnose, with coordinates within
/// `threshold` of zero snapped onto the containing equilibrium plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumBlock {
    /// `[C, Cv, Cd, Cdv, V, D]`
    pub state: [f64; 6],
    #[serde(default = "default_snap")]
    pub threshold: f64,
}

fn default_snap() -> f64 {
    1e-9
}

/// Fit run: dataset metadata plus the full estimator configuration. The
/// titer series itself arrives separately via `--data`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitBlock {
    pub moi_label: f64,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(rename = "C0", default = "one")]
    pub cells: f64,
    #[serde(default)]
    pub config: FitConfig,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub command: CommandName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inoculum: Option<InoculumSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrator: Option<IntegratorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<SensitivityBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_prefix: Option<String>,
}

impl RunConfig {
    /// Checks the version, that the document's command matches the invoked
    /// subcommand, and that exactly the blocks this command consumes are
    /// present — a stray block is treated as an error, not ignored.
    pub fn validate(&self, invoked: CommandName) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.command != invoked {
            return Err(format!(
                "config file is for `{}` but `{}` was invoked",
                self.command.as_str(),
                invoked.as_str()
            ));
        }

        use CommandName::*;
        let required: &[&str] = match self.command {
            Simulate | Estimate => &["model", "inoculum"],
            Sensitivity => &["model", "inoculum", "sensitivity"],
            Scan | Cloud => &["grid"],
            Spectrum => &["model", "spectrum"],
            Fit => &["fit"],
        };
        let allowed: &[&str] = match self.command {
            Simulate | Estimate => &["model", "inoculum", "integrator"],
            Sensitivity => &["model", "inoculum", "integrator", "sensitivity"],
            Scan | Cloud => &["grid", "integrator"],
            Spectrum => &["model", "spectrum"],
            Fit => &["fit"],
        };
        let blocks: [(&str, bool); 7] = [
            ("model", self.model.is_some()),
            ("inoculum", self.inoculum.is_some()),
            ("integrator", self.integrator.is_some()),
            ("grid", self.grid.is_some()),
            ("sensitivity", self.sensitivity.is_some()),
            ("spectrum", self.spectrum.is_some()),
            ("fit", self.fit.is_some()),
        ];
        for (name, present) in blocks {
            if required.contains(&name) && !present {
                return Err(format!("`{}` requires a `{name}` block", self.command.as_str()));
            }
            if present && !allowed.contains(&name) {
                return Err(format!("`{}` does not use a `{name}` block", self.command.as_str()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_simulate() -> RunConfig {
        serde_json::from_str(
            r#"{
                "schema_version": 1,
                "command": "simulate",
                "model": {"B": 500.0, "beta": 1e-6, "delta": 10.0, "iota": 1.0, "alpha": 10.0},
                "inoculum": {"m": 100.0, "qV0": 0.75}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn emitted_configs_reload_to_an_equal_document() {
        let cfg = minimal_simulate();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_fields_are_rejected_everywhere() {
        let top = r#"{"schema_version":1,"command":"simulate","surprise":1}"#;
        assert!(serde_json::from_str::<RunConfig>(top).is_err());
        let nested = r#"{
            "schema_version": 1, "command": "spectrum",
            "model": {"B": 3.0, "beta": 0.2, "delta": 2.0, "iota": 1.0, "alpha": 1.0},
            "spectrum": {"state": [0,0,0,0,1,1], "thresh": 1e-9}
        }"#;
        assert!(serde_json::from_str::<RunConfig>(nested).is_err());
        let bad_param = r#"{
            "schema_version": 1, "command": "simulate",
            "model": {"B": -3.0, "beta": 0.2, "delta": 2.0, "iota": 1.0, "alpha": 1.0},
            "inoculum": {"m": 1.0, "qV0": 0.5}
        }"#;
        assert!(serde_json::from_str::<RunConfig>(bad_param).is_err());
    }

    #[test]
    fn version_and_command_mismatches_are_named() {
        let mut cfg = minimal_simulate();
        cfg.schema_version = 2;
        let err = cfg.validate(CommandName::Simulate).unwrap_err();
        assert!(err.contains("schema_version 2"), "{err}");

        let cfg = minimal_simulate();
        let err = cfg.validate(CommandName::Scan).unwrap_err();
        assert!(err.contains("`simulate`") && err.contains("`scan`"), "{err}");
    }

    #[test]
    fn stray_blocks_are_errors_not_noise() {
        let json = r#"{
            "schema_version": 1, "command": "scan",
            "grid": {
                "x_axis": {"name": "qV0", "min": 0.1, "max": 0.9, "steps": 3, "scale": "linear"},
                "y_axis": {"name": "B", "min": 2.0, "max": 6.0, "steps": 3, "scale": "linear"},
                "params": {"B": 3.0, "beta": 0.2, "delta": 2.0, "iota": 1.0, "alpha": 1.0},
                "inoculum": {"m": 1.0, "qV0": 0.5}
            },
            "model": {"B": 3.0, "beta": 0.2, "delta": 2.0, "iota": 1.0, "alpha": 1.0}
        }"#;
        let cfg: RunConfig = serde_json::from_str(json).unwrap();
        let err = cfg.validate(CommandName::Scan).unwrap_err();
        assert!(err.contains("`model`"), "{err}");

        let missing = r#"{"schema_version": 1, "command": "simulate"}"#;
        let cfg: RunConfig = serde_json::from_str(missing).unwrap();
        let err = cfg.validate(CommandName::Simulate).unwrap_err();
        assert!(err.contains("requires a `model`"), "{err}");
    }
}
