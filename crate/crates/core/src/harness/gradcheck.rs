use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::Family;
use crate::closed_form::ClosedForm;
use crate::error::Result;
use crate::estimators::{LikelihoodData, PreparedTarget};
use crate::kernel::KernelConfig;
use crate::models::{self, LowRankCovModel, MeanModel, ParametricModel, SymGmmModel};
use crate::optimize::{finite_diff_gradient, finite_diff_hessian, relative_error, Objective};
use crate::rng::{self, StreamRng};

/// Relative error bound for analytic gradients against central differences.
pub const GRADIENT_TOL: f64 = 1e-5;
/// Relative Frobenius error bound for analytic Hessians.
pub const HESSIAN_TOL: f64 = 1e-4;

/// Observations drawn per point for the data-dependent objectives.
const SUITE_SAMPLE: usize = 30;

/// Worst relative error of one finite-difference suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: String,
    pub points: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

fn normal_vector(d: usize, r: &mut StreamRng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| r.sample::<f64, _>(StandardNormal))
}

/// B Bᵀ/d + ½I with standard normal B.
fn random_spd(d: usize, r: &mut StreamRng) -> DMatrix<f64> {
    let b = DMatrix::from_fn(d, d, |_, _| r.sample::<f64, _>(StandardNormal));
    &b * b.transpose() / d as f64 + DMatrix::identity(d, d) * 0.5
}

/// A random configuration: truth (with ε > 0 so the likelihood exists),
/// bandwidth σ² ∈ [0.5, 4] and an evaluation point.
fn random_config(family: Family, d: usize, r: &mut StreamRng) -> Result<(ParametricModel, KernelConfig, DVector<f64>)> {
    let truth = match family {
        Family::Mean => ParametricModel::Mean(MeanModel::new(normal_vector(d, r), random_spd(d, r))?),
        Family::Cov => ParametricModel::Cov(LowRankCovModel::new(normal_vector(d, r), r.gen_range(0.1..1.0))?),
        Family::Gmm => ParametricModel::Gmm(SymGmmModel::new(normal_vector(d, r), random_spd(d, r))?),
    };
    let kernel = KernelConfig::new(r.gen_range(0.5..4.0))?;
    let theta = normal_vector(d, r);
    Ok((truth, kernel, theta))
}

fn closed_form(truth: &ParametricModel, kernel: KernelConfig) -> ClosedForm {
    match truth {
        ParametricModel::Mean(m) => ClosedForm::Mean(m.clone(), kernel),
        ParametricModel::Cov(m) => ClosedForm::Cov(m.clone(), kernel),
        ParametricModel::Gmm(m) => ClosedForm::Gmm(m.clone(), kernel),
        ParametricModel::Unmixing(_) => unreachable!("random_config never builds unmixing models"),
    }
}

/// Compares every analytic gradient (closed form, OSMMD, NLL) and the cov and
/// gmm closed-form Hessians with central finite differences at `points`
/// random configurations per family in dimension `dim`.
pub fn gradient_suites(families: &[Family], dim: usize, points: usize, seed: u64) -> Result<Vec<SuiteResult>> {
    let mut out = Vec::new();
    for (fi, &family) in families.iter().enumerate() {
        let mut r = rng::stream(rng::derive_seed(seed, fi as u64));
        let (mut g_cf, mut h_cf, mut g_os, mut g_nll) = (0f64, 0f64, 0f64, 0f64);
        for _ in 0..points {
            let (truth, kernel, theta) = random_config(family, dim, &mut r)?;
            let cf = closed_form(&truth, kernel);
            let (_, g) = cf.value_and_gradient(&theta);
            let fd = finite_diff_gradient(|p| cf.value(p), &theta);
            g_cf = g_cf.max(relative_error(g.as_slice(), fd.as_slice(), 1e-12));
            if family != Family::Mean {
                let h = cf.eval(&theta, true)?.hessian.expect("requested Hessian");
                let fdh = finite_diff_hessian(|p| cf.value_and_gradient(p).1, &theta);
                h_cf = h_cf.max((&h - &fdh).norm() / fdh.norm().max(1e-12));
            }

            let y = models::sample(&truth, SUITE_SAMPLE, r.gen())?;
            let at = |p: &DVector<f64>| truth.with_params(p).expect("parameter length matches");
            let target = PreparedTarget::new(&y, &kernel)?;
            let os = target.osmmd(&at(&theta))?;
            let fd = finite_diff_gradient(|p| target.osmmd(&at(p)).map_or(f64::NAN, |e| e.value), &theta);
            g_os = g_os.max(relative_error(os.gradient.as_slice(), fd.as_slice(), 1e-12));

            let data = LikelihoodData::new(&y)?;
            let nl = data.nll(&at(&theta))?;
            let fd = finite_diff_gradient(|p| data.nll(&at(p)).map_or(f64::NAN, |e| e.value), &theta);
            g_nll = g_nll.max(relative_error(nl.gradient.as_slice(), fd.as_slice(), 1e-12));
        }
        let suite = |kind: &str, max_error: f64, tolerance: f64| SuiteResult {
            name: format!("{} {kind}", family.tag()),
            points,
            max_error,
            tolerance,
        };
        out.push(suite("closed-form gradient", g_cf, GRADIENT_TOL));
        if family != Family::Mean {
            out.push(suite("closed-form hessian", h_cf, HESSIAN_TOL));
        }
        out.push(suite("osmmd gradient", g_os, GRADIENT_TOL));
        out.push(suite("nll gradient", g_nll, GRADIENT_TOL));
    }
    Ok(out)
}
