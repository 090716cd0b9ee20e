//! Run configuration: strict JSON, validated before anything runs.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use spde_holder_core::experiments::{BackendChoice, ExperimentPlan, OperatorPreset, EXPERIMENT_NODE_LIMIT};
use spde_holder_core::noise::{NoiseCondition, ProfileSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid config field `{field}`: {message}")]
    Field { field: String, message: String },
}

fn field_error(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingConfig {
    pub condition: NoiseCondition,
    pub profiles: Vec<ProfileSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub nx: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub samples: usize,
    pub windows: Vec<u32>,
    pub k_list: Vec<f64>,
    pub thetas: Vec<f64>,
    #[serde(default = "default_node_limit")]
    pub node_limit: usize,
    #[serde(default)]
    pub chaining_theta: Option<f64>,
}

fn default_node_limit() -> usize {
    EXPERIMENT_NODE_LIMIT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    pub p: f64,
    pub eps: Vec<f64>,
    pub center: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncrementConfig {
    /// Spatial point, snapped to the nearest node.
    pub x: Vec<f64>,
    /// Base time, snapped to a time level.
    pub t: f64,
    /// Time lags in steps.
    pub lags: Vec<usize>,
    pub p: f64,
    pub samples: usize,
}

/// Extra studies bundled by `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// Constant zero-order term `c` for the growth study.
    #[serde(default)]
    pub growth_c: Option<f64>,
    #[serde(default)]
    pub threshold: Option<ThresholdConfig>,
    /// Sample count for the tail study.
    #[serde(default)]
    pub tail_samples: Option<usize>,
    #[serde(default)]
    pub increments: Option<IncrementConfig>,
}

fn default_backend() -> BackendChoice {
    BackendChoice::Spectral { modes: None }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub operator: OperatorPreset,
    pub forcing: ForcingConfig,
    pub grid: GridConfig,
    pub plan: PlanConfig,
    pub seed: u64,
    #[serde(default = "default_backend")]
    pub backend: BackendChoice,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
    /// Number of leading samples whose raw fields `simulate` writes out.
    #[serde(default)]
    pub raw_dump: usize,
    #[serde(default)]
    pub report: ReportConfig,
}

fn is_power_of_two_f64(x: f64) -> bool {
    x.is_finite() && x > 0.0 && x == 2f64.powi(x.log2().round() as i32)
}

impl RunConfig {
    pub fn to_plan(&self) -> ExperimentPlan {
        ExperimentPlan {
            operator: self.operator,
            forcing: self.forcing.profiles.clone(),
            condition: self.forcing.condition,
            dim: self.grid.dim,
            nx: self.grid.nx,
            dt: self.grid.dt,
            windows: self.plan.windows.clone(),
            samples: self.plan.samples,
            k_list: self.plan.k_list.clone(),
            thetas: self.plan.thetas.clone(),
            seed: self.seed,
            backend: self.backend,
            node_limit: self.plan.node_limit,
            allow_growth: false,
            chaining_theta: self.plan.chaining_theta,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.grid;
        if !(1..=2).contains(&g.dim) {
            return Err(field_error("grid.dim", format!("{} is not 1 or 2", g.dim)));
        }
        if g.nx < 3 || !(g.nx - 1).is_power_of_two() {
            return Err(field_error("grid.nx", format!("{} is not 2^k + 1 with k >= 1", g.nx)));
        }
        if !(g.dt > 0.0 && g.dt <= 1.0 && is_power_of_two_f64(g.dt)) {
            return Err(field_error("grid.dt", format!("{} is not 2^-k", g.dt)));
        }
        let p = &self.plan;
        if p.samples < spde_holder_core::experiments::MIN_PLAN_SAMPLES {
            return Err(field_error("plan.samples", format!("{} is below 100", p.samples)));
        }
        if p.windows.is_empty() {
            return Err(field_error("plan.windows", "empty"));
        }
        if let Some(t) = p.thetas.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(field_error("plan.thetas", format!("{t} is not in (0,1)")));
        }
        if let Some(k) = p.k_list.iter().find(|k| !(**k >= 0.0)) {
            return Err(field_error("plan.k_list", format!("{k} is negative")));
        }
        if let Some(t) = p.chaining_theta {
            if !(t > 0.0 && t < 1.0) {
                return Err(field_error("plan.chaining_theta", format!("{t} is not in (0,1)")));
            }
        }
        if p.node_limit == 0 {
            return Err(field_error("plan.node_limit", "must be positive"));
        }
        if self.threads == Some(0) {
            return Err(field_error("threads", "must be positive"));
        }
        let plan = self.to_plan();
        plan.operator_spec::<f64>()
            .map_err(|e| field_error("operator", e.to_string()))?;
        plan.build_backend::<f64>()
            .map_err(|e| field_error("backend", e.to_string()))?;
        plan.build_forcing::<f64>()
            .map_err(|e| field_error("forcing", e.to_string()))?;
        if let Some(th) = &self.report.threshold {
            if th.center.len() != g.dim {
                return Err(field_error("report.threshold.center", "length differs from grid.dim"));
            }
            if !(th.p > 1.0) {
                return Err(field_error("report.threshold.p", "must exceed 1"));
            }
        }
        if let Some(n) = self.report.tail_samples {
            let need = spde_holder_core::experiments::MIN_TAIL_SAMPLES;
            if n < need {
                return Err(field_error("report.tail_samples", format!("{n} is below {need}")));
            }
        }
        if let Some(inc) = &self.report.increments {
            let need = spde_holder_core::mild_solver::MIN_MOMENT_SAMPLES;
            if inc.samples < need {
                return Err(field_error("report.increments.samples", format!("{} is below {need}", inc.samples)));
            }
            if inc.x.len() != g.dim {
                return Err(field_error("report.increments.x", "length differs from grid.dim"));
            }
            if inc.lags.len() < 2 {
                return Err(field_error("report.increments.lags", "need at least two lags"));
            }
        }
        Ok(())
    }

    /// Canonical JSON of the resolved config, embedded in every output.
    pub fn resolved_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const MINIMAL: &str = r#"{
        "operator": {"kind": "laplacian"},
        "forcing": {"condition": {"kind": "b_infty"},
                    "profiles": [{"shape": {"kind": "constant", "value": 1.0}}]},
        "grid": {"dim": 1, "nx": 129, "dt": 0.0009765625},
        "plan": {"samples": 100, "windows": [0], "k_list": [2], "thetas": [0.25]},
        "seed": 7
    }"#;

    #[test]
    fn minimal_config_is_accepted() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.grid.nx, 129);
        assert_eq!(cfg.backend, BackendChoice::Spectral { modes: None });
        assert_eq!(cfg.plan.node_limit, EXPERIMENT_NODE_LIMIT);
    }

    #[test]
    fn non_dyadic_grids_are_rejected() {
        let bad = MINIMAL.replace("\"nx\": 129", "\"nx\": 100");
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("grid.nx"), "{err}");
        let bad = MINIMAL.replace("0.0009765625", "0.001");
        assert!(parse_config(&bad).unwrap_err().to_string().contains("grid.dt"));
    }

    #[test]
    fn unknown_keys_are_named() {
        let bad = MINIMAL.replace("\"seed\": 7", "\"seed\": 7, \"fourier_cutofff\": 3");
        let err = parse_config(&bad).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }));
        assert!(err.to_string().contains("fourier_cutofff"), "{err}");
    }

    #[test]
    fn parse_errors_carry_positions() {
        let err = parse_config("{\n  \"seed\": ,\n}").unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn forcing_violations_are_validation_errors() {
        let bad = MINIMAL.replace("\"value\": 1.0", "\"value\": 2.0");
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("`forcing`"), "{err}");
    }

    #[test]
    fn powers_of_two() {
        assert!(is_power_of_two_f64(1.0 / 1024.0));
        assert!(is_power_of_two_f64(1.0));
        assert!(!is_power_of_two_f64(0.3));
        assert!(!is_power_of_two_f64(0.0));
    }
}
