//! Gaussian RBF kernel and its closed-form Gaussian expectation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{check_dim, log_det, spd_cholesky};
use crate::models::Sample;

/// RBF bandwidth σ² (a squared length, same units as ‖x − y‖²).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KernelConfig {
    bandwidth: f64,
}

impl KernelConfig {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if bandwidth > 0.0 && bandwidth.is_finite() {
            Ok(Self { bandwidth })
        } else {
            Err(Error::InvalidArgument(format!("bandwidth must be positive and finite, got {bandwidth}")))
        }
    }

    /// σ².
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    #[inline]
    pub(crate) fn eval_sq(&self, sq_dist: f64) -> f64 {
        (-0.5 * sq_dist / self.bandwidth).exp()
    }
}

#[inline]
pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// exp(−‖x − y‖² / (2σ²)).
pub fn rbf(x: &[f64], y: &[f64], cfg: &KernelConfig) -> Result<f64> {
    check_dim("rbf operand", x.len(), y.len())?;
    Ok(cfg.eval_sq(sq_dist(x, y)))
}

/// E_{Z ~ N(μ, Σ)} exp(−‖Z‖² / (2σ²)) = |Σ/σ² + I|^{-1/2} · exp(−½ μᵀ(Σ + σ²I)⁻¹μ).
///
/// Σ only needs to be positive semidefinite; the factorized matrix is
/// Σ + σ²I, which is positive definite for every σ² > 0.
pub fn gaussian_rbf_integral(mu: &DVector<f64>, sigma_cov: &DMatrix<f64>, cfg: &KernelConfig) -> Result<f64> {
    let d = mu.len();
    check_dim("covariance", d, sigma_cov.nrows())?;
    check_dim("covariance", d, sigma_cov.ncols())?;
    let s2 = cfg.bandwidth();
    let shifted = sigma_cov + DMatrix::identity(d, d) * s2;
    let chol = spd_cholesky(&shifted, "covariance + bandwidth·I")?;
    let log_det_scaled = log_det(&chol) - d as f64 * s2.ln();
    let quad = mu.dot(&chol.solve(mu));
    Ok((-0.5 * log_det_scaled - 0.5 * quad).exp())
}

/// Off-diagonal xx sum, off-diagonal yy sum and full xy sum of kernel values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramSums {
    pub xx_offdiag: f64,
    pub yy_offdiag: f64,
    pub xy: f64,
}

/// Σ_{i≠j} k(xᵢ, xⱼ) over both orderings of each pair.
pub(crate) fn offdiag_sum(x: &Sample, cfg: &KernelConfig) -> f64 {
    let n = x.count();
    let mut total = 0.0;
    for i in 0..n {
        let xi = x.point(i);
        let mut row = 0.0;
        for j in (i + 1)..n {
            row += cfg.eval_sq(sq_dist(xi, x.point(j)));
        }
        total += row;
    }
    2.0 * total
}

pub(crate) fn cross_sum(x: &Sample, y: &Sample, cfg: &KernelConfig) -> f64 {
    let mut total = 0.0;
    for xi in x.iter() {
        let mut row = 0.0;
        for yj in y.iter() {
            row += cfg.eval_sq(sq_dist(xi, yj));
        }
        total += row;
    }
    total
}

/// The three unnormalized kernel sums of the unbiased MMD estimator.
pub fn gram_sums(x: &Sample, y: &Sample, cfg: &KernelConfig) -> Result<GramSums> {
    for s in [x, y] {
        if s.count() < 2 {
            return Err(Error::InsufficientSample { needed: 2, got: s.count() });
        }
    }
    check_dim("sample", x.dim(), y.dim())?;
    Ok(GramSums {
        xx_offdiag: offdiag_sum(x, cfg),
        yy_offdiag: offdiag_sum(y, cfg),
        xy: cross_sum(x, y, cfg),
    })
}

/// Full kernel matrix K[i, j] = k(xᵢ, xⱼ).
pub fn kernel_matrix(x: &Sample, cfg: &KernelConfig) -> DMatrix<f64> {
    let n = x.count();
    DMatrix::from_fn(n, n, |i, j| cfg.eval_sq(sq_dist(x.point(i), x.point(j))))
}
