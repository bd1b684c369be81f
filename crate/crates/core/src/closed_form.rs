//! Population MMD in closed form.
//!
//! For X ~ P_θ and Y ~ P_θ*, every expectation E k(·,·) in
//! MMD(θ, θ*) = E k(X, X') + E k(Y, Y') − 2 E k(X, Y) is an expectation of the
//! RBF kernel over a Gaussian difference, which [`crate::kernel::gaussian_rbf_integral`]
//! evaluates exactly. The three families below specialise that identity so the
//! value, gradient and Hessian come out in closed form.
//!
//! Prefactor convention: σᵈ/√|2Σ + σ²I| and 1/√|2Σ/σ² + I| are the same
//! number; both the single-Gaussian and the mixture objectives use it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::KernelConfig;
use crate::linalg::{check_dim, log_det, spd_cholesky};
use crate::models::{LowRankCovModel, MeanModel, SymGmmModel};
use crate::optimize::Objective;

/// Objective value, gradient and (optionally) Hessian at one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct MmdEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: Option<DMatrix<f64>>,
}

/// Which hyperplane the non-trivial stationary points live on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaddleConstraint {
    OrthogonalToAStar,
    OrthogonalToMuStar,
}

impl SaddleConstraint {
    pub fn tag(&self) -> &'static str {
        match self {
            SaddleConstraint::OrthogonalToAStar => "orthogonal-to-a*",
            SaddleConstraint::OrthogonalToMuStar => "orthogonal-to-mu*",
        }
    }
}

/// The ring of saddles orthogonal to the true parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleDescription {
    pub exists: bool,
    /// Squared radius of the ring; `None` when the ring does not exist.
    pub radius_sq: Option<f64>,
    pub constraint: SaddleConstraint,
}

/// Gaussian with unknown mean: 2|2Σ/σ² + I|^{-1/2} (1 − exp(−½ δᵀ(2Σ + σ²I)⁻¹δ)), δ = μ − μ*.
pub fn mmd_mean(model_star: &MeanModel, mu: &DVector<f64>, cfg: &KernelConfig, with_hessian: bool) -> Result<MmdEval> {
    let d = model_star.dim();
    check_dim("mean", d, mu.len())?;
    let s2 = cfg.bandwidth();
    let b = &model_star.sigma_cov * 2.0 + DMatrix::identity(d, d) * s2;
    let chol = spd_cholesky(&b, "2Σ + σ²I")?;
    let pref = (-0.5 * (log_det(&chol) - d as f64 * s2.ln())).exp();
    let delta = mu - &model_star.mu;
    let w_delta = chol.solve(&delta);
    let q = delta.dot(&w_delta);
    let e = (-0.5 * q).exp();
    let value = -2.0 * pref * (-0.5 * q).exp_m1();
    let gradient = &w_delta * (2.0 * pref * e);
    let hessian = with_hessian.then(|| {
        let w = chol.inverse();
        (w - &w_delta * w_delta.transpose()) * (2.0 * pref * e)
    });
    Ok(MmdEval { value, gradient, hessian })
}

/// Rank-one covariance helper quantities shared by value, gradient and Hessian.
struct CovTerms {
    c: f64,
    s: f64,
    k: f64,
}

impl CovTerms {
    fn new(model_star: &LowRankCovModel, cfg: &KernelConfig) -> Self {
        let s2 = cfg.bandwidth();
        let c = 2.0 * model_star.epsilon.powi(2) + s2;
        let s = model_star.a.norm_squared();
        let k = (s2 / c).powf(model_star.dim() as f64 / 2.0);
        Self { c, s, k }
    }

    /// (a* a*ᵀ + cI)⁻¹ v via Sherman–Morrison.
    fn m_inv(&self, a_star: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        (v - a_star * (a_star.dot(v) / (self.c + self.s))) / self.c
    }
}

/// Gaussian with rank-one covariance a aᵀ + ε²I.
///
/// With c = 2ε² + σ², s = ‖a*‖², K = (σ²/c)^{d/2} and M = a* a*ᵀ + cI the
/// three determinant terms reduce, by the matrix-determinant lemma, to
///
/// ```text
/// K (1 + 2‖a‖²/c)^{-1/2} + K (1 + 2s/c)^{-1/2} − 2K √(c/(c+s)) (1 + aᵀM⁻¹a)^{-1/2}
/// ```
///
/// so nothing singular is ever inverted, even at ε = 0.
pub fn mmd_cov(model_star: &LowRankCovModel, a: &DVector<f64>, cfg: &KernelConfig, with_hessian: bool) -> Result<MmdEval> {
    let d = model_star.dim();
    check_dim("loading vector", d, a.len())?;
    let t = CovTerms::new(model_star, cfg);
    let a_star = &model_star.a;
    let n = a.norm_squared();
    let r = 2.0 * n / t.c;
    let m_inv_a = t.m_inv(a_star, a);
    let q = a.dot(&m_inv_a);
    let k3 = 2.0 * t.k * (t.c / (t.c + t.s)).sqrt();

    let t1 = t.k / (1.0 + r).sqrt();
    let t2 = t.k / (1.0 + 2.0 * t.s / t.c).sqrt();
    let t3 = k3 / (1.0 + q).sqrt();
    let value = t1 + t2 - t3;

    let g1 = -2.0 * t.k / t.c * (1.0 + r).powf(-1.5);
    let g3 = k3 * (1.0 + q).powf(-1.5);
    let gradient = a * g1 + &m_inv_a * g3;

    let hessian = with_hessian.then(|| {
        let mut m_inv = DMatrix::identity(d, d) - a_star * a_star.transpose() / (t.c + t.s);
        m_inv /= t.c;
        let h1 = (DMatrix::identity(d, d) - a * a.transpose() * (6.0 / (t.c * (1.0 + r)))) * g1;
        let h3 = (m_inv - &m_inv_a * m_inv_a.transpose() * (3.0 / (1.0 + q))) * g3;
        h1 + h3
    });
    Ok(MmdEval { value, gradient, hessian })
}

/// (2Σ + σ²I)⁻¹ and the prefactor |2Σ/σ² + I|^{-1/2} for the mixture objective.
struct GmmMetric {
    w: DMatrix<f64>,
    pref: f64,
}

impl GmmMetric {
    fn new(model_star: &SymGmmModel, cfg: &KernelConfig) -> Result<Self> {
        let d = model_star.dim();
        let s2 = cfg.bandwidth();
        let b = &model_star.sigma_cov * 2.0 + DMatrix::identity(d, d) * s2;
        let chol = spd_cholesky(&b, "2Σ + σ²I")?;
        let pref = (-0.5 * (log_det(&chol) - d as f64 * s2.ln())).exp();
        Ok(Self { w: chol.inverse(), pref })
    }

    fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(&(&self.w * v))
    }
}

/// Symmetric two-component mixture with unknown mean.
///
/// ½P [e(2μ) + 1 + e(2μ*) + 1 − 2e(μ − μ*) − 2e(μ + μ*)] with
/// e(v) = exp(−½ vᵀ(2Σ + σ²I)⁻¹v) and P = |2Σ/σ² + I|^{-1/2}.
pub fn mmd_gmm(model_star: &SymGmmModel, mu: &DVector<f64>, cfg: &KernelConfig, with_hessian: bool) -> Result<MmdEval> {
    let d = model_star.dim();
    check_dim("mean", d, mu.len())?;
    let m = GmmMetric::new(model_star, cfg)?;
    let ms = &model_star.mu;
    let minus = mu - ms;
    let plus = mu + ms;
    let w_mu = &m.w * mu;
    let w_minus = &m.w * &minus;
    let w_plus = &m.w * &plus;
    let e2 = (-2.0 * mu.dot(&w_mu)).exp();
    let e2_star = (-2.0 * m.inner(ms, ms)).exp();
    let em = (-0.5 * minus.dot(&w_minus)).exp();
    let ep = (-0.5 * plus.dot(&w_plus)).exp();

    let value = 0.5 * m.pref * ((e2 + e2_star) + 2.0 - 2.0 * (em + ep));
    let gradient = (&w_mu * (-2.0 * e2) + &w_minus * em + &w_plus * ep) * m.pref;
    let hessian = with_hessian.then(|| {
        let h = (&m.w - &w_mu * w_mu.transpose() * 4.0) * (-2.0 * e2)
            + (&m.w - &w_minus * w_minus.transpose()) * em
            + (&m.w - &w_plus * w_plus.transpose()) * ep;
        h * m.pref
    });
    Ok(MmdEval { value, gradient, hessian })
}

/// Ring of stationary points {a : aᵀa* = 0, ‖a‖² = t} of the rank-one
/// covariance objective, with c = 2ε² + σ², s = ‖a*‖² and
///
/// ```text
/// t = c ((s + c)^{1/3} − c^{1/3}) / (2c^{1/3} − (s + c)^{1/3})
/// ```
///
/// The ring exists iff the denominator is positive (c > s/7) and there is
/// room for a non-zero vector orthogonal to a* (d ≥ 2).
pub fn cov_orthogonal_saddle(model_star: &LowRankCovModel, cfg: &KernelConfig) -> Result<SaddleDescription> {
    let s = model_star.a.norm_squared();
    if s == 0.0 {
        return Err(Error::InvalidModel("true loading vector must be non-zero".into()));
    }
    let c = 2.0 * model_star.epsilon.powi(2) + cfg.bandwidth();
    let constraint = SaddleConstraint::OrthogonalToAStar;
    // 2c^{1/3} > (s+c)^{1/3}  <=>  7c > s; compared with a relative margin so the boundary reads as absent.
    if model_star.dim() < 2 || 7.0 * c - s <= 1e-12 * s {
        return Ok(SaddleDescription { exists: false, radius_sq: None, constraint });
    }
    let cr = c.cbrt();
    let scr = (s + c).cbrt();
    let radius_sq = c * (scr - cr) / (2.0 * cr - scr);
    Ok(SaddleDescription { exists: true, radius_sq: Some(radius_sq), constraint })
}

/// Point on the covariance saddle ring obtained by projecting `direction`
/// onto the hyperplane orthogonal to a*.
pub fn cov_saddle_point(model_star: &LowRankCovModel, cfg: &KernelConfig, direction: &DVector<f64>) -> Result<Option<DVector<f64>>> {
    check_dim("direction", model_star.dim(), direction.len())?;
    let ring = cov_orthogonal_saddle(model_star, cfg)?;
    let Some(radius_sq) = ring.radius_sq else {
        return Ok(None);
    };
    let a_star = &model_star.a;
    let v = direction - a_star * (a_star.dot(direction) / a_star.norm_squared());
    let norm = v.norm();
    if norm < 1e-12 * direction.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidArgument("direction is parallel to a*".into()));
    }
    Ok(Some(v * (radius_sq.sqrt() / norm)))
}

/// The mixture's non-trivial stationary set, in the metric W = (2Σ + σ²I)⁻¹:
/// μᵀWμ* = 0 and μᵀWμ = μ*ᵀWμ*/3. `radius_sq` is the W-norm target μ*ᵀWμ*/3.
///
/// The second condition follows from setting both coefficients of the
/// gradient P·W[μ(e(μ−μ*) + e(μ+μ*) − 2e(2μ)) + μ*(e(μ+μ*) − e(μ−μ*))] to zero:
/// W-orthogonality makes e(μ−μ*) = e(μ+μ*), and that common value equals
/// e(2μ) only when ‖μ‖²_W + ‖μ*‖²_W = 4‖μ‖²_W.
pub fn gmm_orthogonal_saddle(model_star: &SymGmmModel, cfg: &KernelConfig) -> Result<SaddleDescription> {
    let m = GmmMetric::new(model_star, cfg)?;
    let s = m.inner(&model_star.mu, &model_star.mu);
    let constraint = SaddleConstraint::OrthogonalToMuStar;
    if s == 0.0 || model_star.dim() < 2 {
        return Ok(SaddleDescription { exists: false, radius_sq: None, constraint });
    }
    Ok(SaddleDescription { exists: true, radius_sq: Some(s / 3.0), constraint })
}

/// Point of the mixture saddle set built from `direction`.
pub fn gmm_saddle_point(model_star: &SymGmmModel, cfg: &KernelConfig, direction: &DVector<f64>) -> Result<Option<DVector<f64>>> {
    check_dim("direction", model_star.dim(), direction.len())?;
    let ring = gmm_orthogonal_saddle(model_star, cfg)?;
    let Some(radius_sq) = ring.radius_sq else {
        return Ok(None);
    };
    let m = GmmMetric::new(model_star, cfg)?;
    let ms = &model_star.mu;
    let v = direction - ms * (m.inner(ms, direction) / m.inner(ms, ms));
    let norm_sq = m.inner(&v, &v);
    if norm_sq < 1e-24 * direction.norm_squared().max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidArgument("direction is parallel to mu*".into()));
    }
    Ok(Some(v * (radius_sq / norm_sq).sqrt()))
}

pub const GMM_SADDLE_TOL: f64 = 1e-8;

/// Whether `mu` lies on the mixture's orthogonal saddle set, within
/// [`GMM_SADDLE_TOL`] relative tolerance on both defining conditions.
pub fn gmm_saddle_check(model_star: &SymGmmModel, mu: &DVector<f64>, cfg: &KernelConfig) -> Result<bool> {
    check_dim("mean", model_star.dim(), mu.len())?;
    let m = GmmMetric::new(model_star, cfg)?;
    let ms = &model_star.mu;
    let cross = m.inner(mu, ms);
    let nn = m.inner(mu, mu);
    let ss = m.inner(ms, ms);
    let orthogonal = cross.abs() <= GMM_SADDLE_TOL * (nn * ss).sqrt();
    let on_radius = (3.0 * nn - ss).abs() <= GMM_SADDLE_TOL * ss;
    Ok(ss > 0.0 && orthogonal && on_radius)
}

/// A closed-form objective bound to its ground truth and kernel.
#[derive(Debug, Clone)]
pub enum ClosedForm {
    Mean(MeanModel, KernelConfig),
    Cov(LowRankCovModel, KernelConfig),
    Gmm(SymGmmModel, KernelConfig),
}

impl ClosedForm {
    pub fn eval(&self, theta: &DVector<f64>, with_hessian: bool) -> Result<MmdEval> {
        match self {
            ClosedForm::Mean(m, k) => mmd_mean(m, theta, k, with_hessian),
            ClosedForm::Cov(m, k) => mmd_cov(m, theta, k, with_hessian),
            ClosedForm::Gmm(m, k) => mmd_gmm(m, theta, k, with_hessian),
        }
    }

    pub fn truth(&self) -> DVector<f64> {
        match self {
            ClosedForm::Mean(m, _) => m.mu.clone(),
            ClosedForm::Cov(m, _) => m.a.clone(),
            ClosedForm::Gmm(m, _) => m.mu.clone(),
        }
    }
}

impl Objective for ClosedForm {
    fn dim(&self) -> usize {
        self.truth().len()
    }

    fn value_and_gradient(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        match self.eval(theta, false) {
            Ok(e) => (e.value, e.gradient),
            Err(_) => (f64::NAN, DVector::from_element(theta.len(), f64::NAN)),
        }
    }

    fn hessian(&self, theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.eval(theta, true).ok().and_then(|e| e.hessian)
    }
}
