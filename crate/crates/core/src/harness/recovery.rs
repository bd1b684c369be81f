use std::time::Instant;

use log::debug;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{Estimator, Family};
use crate::error::{Error, Result};
use crate::estimators::{LikelihoodData, PreparedTarget};
use crate::kernel::KernelConfig;
use crate::models::{self, draw_latent, LowRankCovModel, MeanModel, ParametricModel, SymGmmModel};
use crate::optimize::{run_descent, OptimizerConfig};
use crate::rng;

/// Standard deviation of the random initialization θ₀ ~ N(0, INIT_SCALE² I).
pub const INIT_SCALE: f64 = 0.1;

/// Draws a ground-truth model. Mean-type parameters have standard normal
/// entries; the rank-one factor uses standard deviation ½ so that ‖a*‖² ≈ d/4.
pub fn random_problem(family: Family, dim: usize, epsilon: f64, seed: u64) -> Result<ParametricModel> {
    if dim < 1 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    let mut r = rng::stream(seed);
    let mut draw = |scale: f64| DVector::from_fn(dim, |_, _| scale * r.sample::<f64, _>(StandardNormal));
    Ok(match family {
        Family::Mean => ParametricModel::Mean(MeanModel::isotropic(draw(1.0))),
        Family::Cov => ParametricModel::Cov(LowRankCovModel::new(draw(0.5), epsilon)?),
        Family::Gmm => ParametricModel::Gmm(SymGmmModel::isotropic(draw(1.0))),
    })
}

fn family_of(model: &ParametricModel) -> Result<Family> {
    match model {
        ParametricModel::Mean(_) => Ok(Family::Mean),
        ParametricModel::Cov(_) => Ok(Family::Cov),
        ParametricModel::Gmm(_) => Ok(Family::Gmm),
        ParametricModel::Unmixing(_) => Err(Error::Unsupported("recovery trials cover the mean, cov and gmm families".into())),
    }
}

/// ‖μ − μ*‖/d for the mean (up to sign for the mixture) and
/// ‖aaᵀ − a*a*ᵀ‖_F/d for the rank-one covariance.
pub fn error_metric(family: Family, theta: &DVector<f64>, theta_star: &DVector<f64>) -> f64 {
    let d = theta_star.len() as f64;
    match family {
        Family::Mean => (theta - theta_star).norm() / d,
        Family::Gmm => (theta - theta_star).norm().min((theta + theta_star).norm()) / d,
        Family::Cov => {
            let diff: DMatrix<f64> = theta * theta.transpose() - theta_star * theta_star.transpose();
            diff.norm() / d
        }
    }
}

/// Everything a single recovery trial needs.
#[derive(Debug, Clone)]
pub struct TrialSpec {
    /// Ground truth; known quantities (Σ, ε) are shared with the fitted model.
    pub truth: ParametricModel,
    pub estimator: Estimator,
    /// Observed sample size.
    pub m: usize,
    /// Fake sample size per epoch (MMD only).
    pub n: usize,
    pub optimizer: OptimizerConfig,
    pub kernel: KernelConfig,
    /// Starting parameter; drawn from N(0, INIT_SCALE² I) when absent.
    pub init: Option<DVector<f64>>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialReport {
    pub estimator: Estimator,
    pub family: Family,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub final_param: DVector<f64>,
    pub error_metric: f64,
    pub success: bool,
    /// Set when the optimizer produced a non-finite value; such trials are failures.
    pub diverged: bool,
    pub wall_time: f64,
}

const DATA_STREAM: u64 = 0;
const INIT_STREAM: u64 = 1;
const FAKE_STREAM: u64 = 2;

/// Fits the truth's family to m observations with the chosen estimator.
///
/// Data, initialization and per-epoch fakes come from disjoint substreams of
/// `seed`, so different estimators run with the same seed see the same data.
pub fn recovery_trial(spec: &TrialSpec) -> Result<TrialReport> {
    let family = family_of(&spec.truth)?;
    if spec.m < 2 {
        return Err(Error::InsufficientSample { needed: 2, got: spec.m });
    }
    if spec.estimator == Estimator::Mmd && spec.n < 2 {
        return Err(Error::InsufficientSample { needed: 2, got: spec.n });
    }
    spec.optimizer.validate()?;
    let start = Instant::now();
    let d = spec.truth.param_len();
    let theta_star = spec.truth.params();
    let y = models::sample(&spec.truth, spec.m, rng::derive_seed(spec.seed, DATA_STREAM))?;
    let init = match &spec.init {
        Some(v) => {
            if v.len() != d {
                return Err(Error::dim_mismatch("initial parameter", d, v.len()));
            }
            v.clone()
        }
        None => {
            let mut r = rng::stream(rng::derive_seed(spec.seed, INIT_STREAM));
            DVector::from_fn(d, |_, _| INIT_SCALE * r.sample::<f64, _>(StandardNormal))
        }
    };

    let nan = || (f64::NAN, DVector::from_element(d, f64::NAN));
    let truth = &spec.truth;
    let outcome = match spec.estimator {
        Estimator::Osmmd => {
            let target = PreparedTarget::new(&y, &spec.kernel)?;
            run_descent(
                |_, theta| match truth.with_params(theta).and_then(|m| target.osmmd(&m)) {
                    Ok(e) => (e.value, e.gradient),
                    Err(_) => nan(),
                },
                &init,
                &spec.optimizer,
            )
        }
        Estimator::Mmd => {
            let target = PreparedTarget::new(&y, &spec.kernel)?;
            let n = spec.n;
            run_descent(
                |step, theta| {
                    let Ok(model) = truth.with_params(theta) else { return nan() };
                    let mut r = rng::stream(rng::derive_path(spec.seed, &[FAKE_STREAM, step as u64]));
                    let latent = draw_latent(&model, n, &mut r);
                    match target.empirical_mmd_eval(&model, &latent) {
                        Ok(e) => (e.value, e.gradient),
                        Err(_) => nan(),
                    }
                },
                &init,
                &spec.optimizer,
            )
        }
        Estimator::Mle => {
            let data = LikelihoodData::new(&y)?;
            // Fails up front (e.g. ε = 0) rather than being recorded as divergence.
            data.nll(truth)?;
            run_descent(
                |_, theta| match truth.with_params(theta).and_then(|m| data.nll(&m)) {
                    Ok(e) => (e.value, e.gradient),
                    Err(_) => nan(),
                },
                &init,
                &spec.optimizer,
            )
        }
    };

    let (final_param, diverged) = match outcome {
        Ok(traj) => (traj.final_theta().clone(), false),
        Err(Error::Diverged { step, reason }) => {
            debug!("trial {} ({}) diverged at step {step}: {reason}", spec.seed, spec.estimator.tag());
            (DVector::from_element(d, f64::NAN), true)
        }
        Err(e) => return Err(e),
    };
    let error = if diverged { f64::INFINITY } else { error_metric(family, &final_param, &theta_star) };
    Ok(TrialReport {
        estimator: spec.estimator,
        family,
        m: spec.m,
        n: spec.n,
        seed: spec.seed,
        final_param,
        error_metric: error,
        success: error <= family.threshold(),
        diverged,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics() {
        let star = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(error_metric(Family::Gmm, &-star.clone(), &star), 0.0);
        assert_eq!(error_metric(Family::Cov, &-star.clone(), &star), 0.0);
        assert_eq!(error_metric(Family::Mean, &-star.clone(), &star), 1.0);
    }

    #[test]
    fn osmmd_started_at_truth_stays_there() {
        let truth = random_problem(Family::Mean, 3, 0.0, 4).unwrap();
        let spec = TrialSpec {
            init: Some(truth.params()),
            truth,
            estimator: Estimator::Osmmd,
            m: 200,
            n: 200,
            optimizer: OptimizerConfig::gd(1e-3, 5),
            kernel: KernelConfig::new(10.0).unwrap(),
            seed: 9,
        };
        let report = recovery_trial(&spec).unwrap();
        assert!(report.success);
        assert!(report.error_metric <= 1e-3);
    }

    #[test]
    fn mle_with_zero_noise_is_an_error() {
        let truth = random_problem(Family::Cov, 3, 0.0, 1).unwrap();
        let spec = TrialSpec {
            truth,
            estimator: Estimator::Mle,
            m: 50,
            n: 50,
            optimizer: OptimizerConfig::adam(0.1, 10),
            kernel: KernelConfig::new(10.0).unwrap(),
            init: None,
            seed: 2,
        };
        assert!(matches!(recovery_trial(&spec), Err(Error::LikelihoodUndefined(_))));
    }
}
