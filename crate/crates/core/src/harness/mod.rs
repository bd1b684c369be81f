//! Recovery trials, success-rate sweeps, the linear unmixing benchmark, and
//! result persistence.

mod gradcheck;
mod output;
mod recovery;
mod sweep;
mod unmixing;

use serde::{Deserialize, Serialize};

pub use gradcheck::{gradient_suites, SuiteResult, GRADIENT_TOL, HESSIAN_TOL};
pub use output::{emit_outputs, read_sweep_csv, Report};
pub use recovery::{error_metric, random_problem, recovery_trial, TrialReport, TrialSpec, INIT_SCALE};
pub use sweep::{success_sweep, EstimatorOverride, SweepAxis, SweepConfig, SweepReport, SweepRow};
pub use unmixing::{
    permutation_distance, unmixing_experiment, vca_init, MethodSummary, UnmixingConfig, UnmixingReport,
    MAX_PERMUTATION_RANK,
};

/// Which parametric family a trial estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Mean,
    Cov,
    Gmm,
}

impl Family {
    pub fn tag(&self) -> &'static str {
        match self {
            Family::Mean => "mean",
            Family::Cov => "cov",
            Family::Gmm => "gmm",
        }
    }

    /// Success threshold on [`error_metric`].
    pub fn threshold(&self) -> f64 {
        match self {
            Family::Mean | Family::Gmm => 0.02,
            Family::Cov => 0.05,
        }
    }

    /// Tuned default bandwidth σ² per estimator.
    pub fn default_bandwidth(&self, estimator: Estimator) -> f64 {
        match (self, estimator) {
            (Family::Cov, Estimator::Mmd) => 100.0,
            _ => 10.0,
        }
    }
}

impl std::str::FromStr for Family {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "mean" => Ok(Family::Mean),
            "cov" => Ok(Family::Cov),
            "gmm" => Ok(Family::Gmm),
            other => Err(crate::Error::InvalidArgument(format!("unknown family '{other}' (expected mean, cov or gmm)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Mmd,
    Osmmd,
    Mle,
}

impl Estimator {
    pub fn tag(&self) -> &'static str {
        match self {
            Estimator::Mmd => "mmd",
            Estimator::Osmmd => "osmmd",
            Estimator::Mle => "mle",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "mmd" => Ok(Estimator::Mmd),
            "osmmd" => Ok(Estimator::Osmmd),
            "mle" => Ok(Estimator::Mle),
            other => Err(crate::Error::InvalidArgument(format!("unknown estimator '{other}' (expected mmd, osmmd or mle)"))),
        }
    }
}

/// 95% normal-approximation half-width of a binomial rate.
pub fn rate_half_width(rate: f64, repeats: usize) -> f64 {
    1.96 * (rate * (1.0 - rate) / repeats as f64).sqrt()
}
