//! Run configuration: one JSON document per run, echoed into every output
//! directory.

use std::path::{Path, PathBuf};

use pwabc::abc::{AbcConfig, DEFAULT_MAX_DRAWS};
use pwabc::kde::LatticeSpec;
use pwabc::math::{LpBallSpec, NormOrder};
use pwabc::models::{ModelKind, ModelSpec, PriorSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Model family and its fixed parameters, e.g. `{"id": "cir", "a": 0.5, "sigma": 0.15}`.
    pub model: ModelKind,
    pub data: DataSection,
    /// Prior on the inference scale (logit / log parameters).
    pub prior: PriorSpec,
    pub abc: AbcSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub n: usize,
    #[serde(default = "one")]
    pub dt: f64,
    /// Natural-scale parameters used by `simulate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_true: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbcSection {
    pub m: usize,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "inf_norm")]
    pub p: NormOrder,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_draws")]
    pub max_draws: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

fn inf_norm() -> NormOrder {
    NormOrder::Infinity
}

fn default_max_draws() -> u64 {
    DEFAULT_MAX_DRAWS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Gaussian,
    Kde,
    #[default]
    Both,
}

impl Backend {
    pub fn gaussian(self) -> bool {
        matches!(self, Backend::Gaussian | Backend::Both)
    }

    pub fn kde(self) -> bool {
        matches!(self, Backend::Kde | Backend::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    #[serde(default)]
    pub backend: Backend,
    /// Kernel smoothing parameter; the asymptotically optimal value when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    /// Values tried by `sweep-q` when `--q` is not given.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub q_sweep: Vec<f64>,
    #[serde(default)]
    pub lattice: LatticeSpec,
    /// Posterior draws written per backend.
    #[serde(default)]
    pub posterior_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    #[serde(default)]
    pub lattice: LatticeSpec,
    #[serde(default)]
    pub include_first: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            CliError::Config(format!(
                "line {}, column {}: {}",
                e.line(),
                e.column(),
                strip_position(&e.to_string())
            ))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serialises");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let model = self.model_spec()?;
        self.prior.validate().map_err(config)?;
        if self.prior.dim() != model.param_dim() {
            return Err(CliError::Config(format!(
                "prior has dimension {} but model {} has {} parameters",
                self.prior.dim(),
                model.id(),
                model.param_dim()
            )));
        }
        if self.data.n < 2 {
            return Err(CliError::Config("data.n must be at least 2".into()));
        }
        if !(self.data.dt > 0.0) {
            return Err(CliError::Config("data.dt must be positive".into()));
        }
        if let Some(t) = &self.data.theta_true {
            if t.len() != model.param_dim() {
                return Err(CliError::Config(format!(
                    "data.theta_true needs {} values",
                    model.param_dim()
                )));
            }
        }
        if let Some(x0) = &self.data.x0 {
            if x0.len() != model.obs_dim() {
                return Err(CliError::Config(format!("data.x0 needs {} values", model.obs_dim())));
            }
        }
        self.abc_config(&model)?;
        if let Some(q) = self.estimator.q {
            check_q(q)?;
        }
        for q in &self.estimator.q_sweep {
            check_q(*q)?;
        }
        check_lattice(&self.estimator.lattice, model.param_dim(), "estimator.lattice")?;
        check_lattice(&self.oracle.lattice, model.param_dim(), "oracle.lattice")?;
        if self.oracle.include_first && !model.is_iid() {
            return Err(CliError::Config(
                "oracle.include_first is only meaningful for IID models".into(),
            ));
        }
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        ModelSpec::new(self.model.clone()).map_err(config)
    }

    pub fn abc_config(&self, model: &ModelSpec) -> Result<AbcConfig, CliError> {
        let ball = LpBallSpec::new(self.abc.p, self.abc.epsilon, model.obs_dim(), model.discrete())
            .map_err(config)?;
        let mut cfg = AbcConfig::new(self.abc.m, ball, self.abc.seed);
        cfg.max_draws_per_factor = self.abc.max_draws;
        cfg.workers = self.abc.workers;
        cfg.validate().map_err(config)?;
        Ok(cfg)
    }
}

fn check_q(q: f64) -> Result<(), CliError> {
    if q > 0.0 && q.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("q must be positive, got {q}")))
    }
}

fn check_lattice(spec: &LatticeSpec, d: usize, what: &str) -> Result<(), CliError> {
    let bad_len = |v: &Option<Vec<f64>>| v.as_ref().is_some_and(|v| v.len() != d);
    if bad_len(&spec.lower) || bad_len(&spec.upper) {
        return Err(CliError::Config(format!("{what}: bounds need {d} values")));
    }
    if let (Some(lo), Some(hi)) = (&spec.lower, &spec.upper) {
        if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
            return Err(CliError::Config(format!("{what}: lower must be below upper")));
        }
    }
    if let Some(p) = &spec.points {
        if !(p.len() == 1 || p.len() == d) || p.iter().any(|n| *n < 2) {
            return Err(CliError::Config(format!(
                "{what}: points needs 1 or {d} values, each at least 2"
            )));
        }
    }
    Ok(())
}

fn config(e: pwabc::Error) -> CliError {
    CliError::Config(e.to_string())
}

/// serde_json appends " at line L column C"; the position is reported separately.
fn strip_position(msg: &str) -> &str {
    match msg.rfind(" at line ") {
        Some(i) => &msg[..i],
        None => msg,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BINOMIAL: &str = r#"{
        "model": {"id": "binomial", "trials": 100},
        "data": {"n": 10, "theta_true": [0.6], "seed": 3},
        "prior": {"kind": "gaussian", "mean": [0.0], "sd": [3.0]},
        "abc": {"m": 100, "seed": 1}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::parse(BINOMIAL).unwrap();
        assert_eq!(c.abc.p, NormOrder::Infinity);
        assert_eq!(c.abc.max_draws, DEFAULT_MAX_DRAWS);
        assert_eq!(c.estimator.backend, Backend::Both);
        assert!(c.estimator.lattice.focus);
        assert_eq!(c.data.dt, 1.0);
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::parse(BINOMIAL).unwrap();
        let again = RunConfig::parse(&c.to_json()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.to_json(), again.to_json());
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = BINOMIAL.replace("\"seed\": 1", "\"seed\": 1, \"speed\": 2");
        assert!(matches!(RunConfig::parse(&bad), Err(CliError::Config(_))));
        let bad = BINOMIAL.replace("\"trials\": 100", "\"trials\": 100, \"p\": 0.5");
        assert!(RunConfig::parse(&bad).is_err());
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = RunConfig::parse("{\n  \"model\": {,\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2, column 13"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn inconsistent_sections_rejected() {
        let bad = BINOMIAL.replace("\"mean\": [0.0], \"sd\": [3.0]", "\"mean\": [0.0, 0.0], \"sd\": [3.0, 3.0]");
        assert!(RunConfig::parse(&bad).is_err());
        let cont = BINOMIAL.replace(r#"{"id": "binomial", "trials": 100}"#, r#"{"id": "cir", "a": 0.5, "sigma": 0.15}"#);
        // ε = 0 on a continuous model has a null acceptance region
        assert!(RunConfig::parse(&cont).is_err());
        let q = BINOMIAL.replace("\"seed\": 1}", "\"seed\": 1}, \"estimator\": {\"q\": -1}");
        assert!(RunConfig::parse(&q).is_err());
    }
}
