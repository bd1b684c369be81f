use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::recovery::{random_problem, recovery_trial, TrialReport, TrialSpec};
use super::{rate_half_width, Estimator, Family};
use crate::error::{Error, Result};
use crate::kernel::KernelConfig;
use crate::optimize::{Method, OptimizerConfig};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// Observed sample size (fakes follow n = m unless `n` is fixed).
    M,
    /// Isotropic noise level of the rank-one covariance family.
    Epsilon,
}

impl SweepAxis {
    pub fn tag(&self) -> &'static str {
        match self {
            SweepAxis::M => "m",
            SweepAxis::Epsilon => "epsilon",
        }
    }
}

/// Per-estimator optimizer and kernel settings that replace the sweep-wide ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorOverride {
    pub lr: Option<f64>,
    pub iters: Option<usize>,
    pub bandwidth: Option<f64>,
    pub method: Option<Method>,
}

/// A success-rate sweep. Serialized as a JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub family: Family,
    pub dim: usize,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub estimators: Vec<Estimator>,
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default = "default_method")]
    pub method: Method,
    /// Observed sample size when the axis is ε.
    #[serde(default = "default_m")]
    pub m: usize,
    /// Fake sample size; n = m when absent.
    #[serde(default)]
    pub n: Option<usize>,
    /// Noise level when the axis is m.
    #[serde(default)]
    pub epsilon: f64,
    /// Shared bandwidth; per-family defaults when absent.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    #[serde(default)]
    pub overrides: BTreeMap<Estimator, EstimatorOverride>,
}

fn default_lr() -> f64 {
    0.1
}
fn default_iters() -> usize {
    500
}
fn default_method() -> Method {
    Method::Adam
}
fn default_m() -> usize {
    1000
}

impl SweepConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: SweepConfig = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("line {}, column {}", e.line(), e.column()), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Config { location, message } => Error::config(format!("{}: {location}", path.display()), message),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: &str| Err(Error::config(field, msg));
        if self.repeats == 0 {
            return fail("repeats", "must be at least 1");
        }
        if self.dim == 0 {
            return fail("dim", "must be at least 1");
        }
        if self.values.is_empty() {
            return fail("values", "must list at least one axis value");
        }
        if self.estimators.is_empty() {
            return fail("estimators", "must list at least one estimator");
        }
        match self.axis {
            SweepAxis::M => {
                if self.values.iter().any(|v| v.fract() != 0.0 || *v < 2.0) {
                    return fail("values", "sample sizes must be integers ≥ 2");
                }
            }
            SweepAxis::Epsilon => {
                if self.family != Family::Cov {
                    return fail("axis", "an epsilon sweep needs the cov family");
                }
                if self.values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return fail("values", "noise levels must be finite and non-negative");
                }
                if self.m < 2 {
                    return fail("m", "must be at least 2");
                }
            }
        }
        if !(self.epsilon >= 0.0) {
            return fail("epsilon", "must be non-negative");
        }
        for est in &self.estimators {
            let opt = self.optimizer_for(*est);
            if opt.validate().is_err() {
                return fail(&format!("overrides.{}", est.tag()), "learning rate must be positive and iterations ≥ 1");
            }
            if KernelConfig::new(self.bandwidth_for(*est)).is_err() {
                return fail(&format!("overrides.{}", est.tag()), "bandwidth must be positive");
            }
        }
        Ok(())
    }

    pub fn optimizer_for(&self, est: Estimator) -> OptimizerConfig {
        let o = self.overrides.get(&est).cloned().unwrap_or_default();
        let method = o.method.unwrap_or(self.method);
        let lr = o.lr.unwrap_or(self.lr);
        let iters = o.iters.unwrap_or(self.iters);
        match method {
            Method::Gd => OptimizerConfig::gd(lr, iters),
            Method::Adam => OptimizerConfig::adam(lr, iters),
        }
    }

    pub fn bandwidth_for(&self, est: Estimator) -> f64 {
        self.overrides
            .get(&est)
            .and_then(|o| o.bandwidth)
            .or(self.bandwidth)
            .unwrap_or_else(|| self.family.default_bandwidth(est))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis_value: f64,
    pub estimator: Estimator,
    pub repeats: usize,
    pub successes: usize,
    pub rate: f64,
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub axis_name: String,
    /// Axis-major, then estimators in configuration order.
    pub rows: Vec<SweepRow>,
    pub trials: Vec<TrialReport>,
}

impl SweepReport {
    pub fn rate(&self, axis_value: f64, estimator: Estimator) -> Option<f64> {
        self.rows.iter().find(|r| r.axis_value == axis_value && r.estimator == estimator).map(|r| r.rate)
    }
}

/// Runs every (axis value, repeat, estimator) trial and aggregates success
/// rates. Trials at the same (axis value, repeat) share truth and data.
pub fn success_sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize, Estimator)> = (0..cfg.values.len())
        .flat_map(|a| (0..cfg.repeats).flat_map(move |r| cfg.estimators.iter().map(move |e| (a, r, *e))))
        .collect();
    let trials: Vec<TrialReport> = jobs
        .par_iter()
        .map(|&(a, r, est)| {
            let value = cfg.values[a];
            let (m, epsilon) = match cfg.axis {
                SweepAxis::M => (value as usize, cfg.epsilon),
                SweepAxis::Epsilon => (cfg.m, value),
            };
            let trial_seed = rng::derive_path(cfg.seed, &[a as u64, r as u64]);
            let truth = random_problem(cfg.family, cfg.dim, epsilon, rng::derive_seed(trial_seed, u64::MAX))?;
            recovery_trial(&TrialSpec {
                truth,
                estimator: est,
                m,
                n: cfg.n.unwrap_or(m),
                optimizer: cfg.optimizer_for(est),
                kernel: KernelConfig::new(cfg.bandwidth_for(est))?,
                init: None,
                seed: trial_seed,
            })
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (a, value) in cfg.values.iter().enumerate() {
        for est in &cfg.estimators {
            let successes = jobs
                .iter()
                .zip(&trials)
                .filter(|((ja, _, je), t)| *ja == a && je == est && t.success)
                .count();
            let rate = successes as f64 / cfg.repeats as f64;
            rows.push(SweepRow {
                axis_value: *value,
                estimator: *est,
                repeats: cfg.repeats,
                successes,
                rate,
                half_width: rate_half_width(rate, cfg.repeats),
            });
        }
    }
    Ok(SweepReport { axis_name: cfg.axis.tag().to_string(), rows, trials })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"family": "mean", "dim": 2, "axis": "m", "values": [20], "estimators": ["osmmd"], "repeats": 2}"#;

    #[test]
    fn parses_minimal_config_with_defaults() {
        let cfg = SweepConfig::from_json_str(MINIMAL).unwrap();
        assert_eq!(cfg.lr, 0.1);
        assert_eq!(cfg.bandwidth_for(Estimator::Osmmd), 10.0);
    }

    #[test]
    fn zero_repeats_is_a_config_error() {
        let text = MINIMAL.replace("\"repeats\": 2", "\"repeats\": 0");
        match SweepConfig::from_json_str(&text) {
            Err(Error::Config { location, .. }) => assert_eq!(location, "repeats"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_line_context() {
        let text = "{\n  \"family\": \"mean\",\n  \"dim\": oops\n}";
        match SweepConfig::from_json_str(text) {
            Err(Error::Config { location, .. }) => assert!(location.starts_with("line 3"), "{location}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = MINIMAL.replace("\"repeats\"", "\"repeat_count\": 1, \"repeats\"");
        assert!(matches!(SweepConfig::from_json_str(&text), Err(Error::Config { .. })));
    }

    #[test]
    fn overrides_apply_per_estimator() {
        let text = MINIMAL.replace("\"repeats\": 2", "\"repeats\": 2, \"overrides\": {\"osmmd\": {\"lr\": 10, \"bandwidth\": 1e4}}");
        let cfg = SweepConfig::from_json_str(&text).unwrap();
        assert_eq!(cfg.optimizer_for(Estimator::Osmmd).learning_rate, 10.0);
        assert_eq!(cfg.bandwidth_for(Estimator::Osmmd), 1e4);
        assert_eq!(cfg.bandwidth_for(Estimator::Mmd), 10.0);
    }
}
