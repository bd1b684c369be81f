//! Finite-sample MMD, one-sided MMD with analytic model expectations, and
//! negative log-likelihood baselines.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::{gram_sums, offdiag_sum, KernelConfig};
use crate::linalg::{check_dim, log_det, spd_cholesky};
use crate::models::{push_forward, Latent, LowRankCovModel, MeanModel, ParametricModel, Sample, SymGmmModel};

/// An objective value and its gradient with respect to the model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorEval {
    pub value: f64,
    pub gradient: DVector<f64>,
}

/// Unbiased U-statistic estimate of MMD². Not clamped, so it can be negative.
pub fn empirical_mmd(x: &Sample, y: &Sample, cfg: &KernelConfig) -> Result<f64> {
    let sums = gram_sums(x, y, cfg)?;
    let n = x.count() as f64;
    let m = y.count() as f64;
    Ok(sums.xx_offdiag / (n * (n - 1.0)) + sums.yy_offdiag / (m * (m - 1.0)) - 2.0 * sums.xy / (n * m))
}

fn require_count(sample: &Sample, needed: usize) -> Result<()> {
    if sample.count() < needed {
        Err(Error::InsufficientSample { needed, got: sample.count() })
    } else {
        Ok(())
    }
}

fn row_matrix(s: &Sample) -> DMatrix<f64> {
    DMatrix::from_row_slice(s.count(), s.dim(), s.as_flat())
}

fn row_sq_norms(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.norm_squared()))
}

/// Kernel block between the rows of `a` and `b` through the Gram identity
/// ‖a − b‖² = ‖a‖² + ‖b‖² − 2aᵀb, with its row sums.
struct KernelBlock {
    /// Full block, or for a within-sample block only its strict upper triangle.
    k: DMatrix<f64>,
    symmetric: bool,
    row_sums: DVector<f64>,
}

impl KernelBlock {
    fn cross(a: &DMatrix<f64>, a_sq: &DVector<f64>, b: &DMatrix<f64>, b_sq: &DVector<f64>, cfg: &KernelConfig) -> Self {
        let mut k = a * b.transpose();
        let rows = k.nrows();
        let mut row_sums = DVector::zeros(rows);
        let (a_sq, b_sq) = (a_sq.as_slice(), b_sq.as_slice());
        let scale = -0.5 / cfg.bandwidth();
        for (col, bj) in k.as_mut_slice().chunks_exact_mut(rows).zip(b_sq) {
            for ((v, ai), acc) in col.iter_mut().zip(a_sq).zip(row_sums.iter_mut()) {
                *v = (scale * (ai + bj - 2.0 * *v).max(0.0)).exp();
                *acc += *v;
            }
        }
        Self { k, symmetric: false, row_sums }
    }

    /// Kernel among the rows of `a`, diagonal excluded.
    fn within(a: &DMatrix<f64>, a_sq: &DVector<f64>, cfg: &KernelConfig) -> Self {
        let mut k = a * a.transpose();
        let n = k.nrows();
        let mut row_sums = DVector::zeros(n);
        let a_sq = a_sq.as_slice();
        let scale = -0.5 / cfg.bandwidth();
        for (j, col) in k.as_mut_slice().chunks_exact_mut(n).enumerate() {
            let (upper, lower) = col.split_at_mut(j);
            let mut col_sum = 0.0;
            for (i, v) in upper.iter_mut().enumerate() {
                *v = (scale * (a_sq[i] + a_sq[j] - 2.0 * *v).max(0.0)).exp();
                row_sums[i] += *v;
                col_sum += *v;
            }
            row_sums[j] += col_sum;
            lower.fill(0.0);
        }
        Self { k, symmetric: true, row_sums }
    }

    fn total(&self) -> f64 {
        self.row_sums.sum()
    }

    /// Row i is Σⱼ K[i, j] (aᵢ − bⱼ).
    fn point_gradient(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let kb = if self.symmetric { &self.k * b + self.k.tr_mul(b) } else { &self.k * b };
        let mut out = a.clone();
        for mut col in out.column_iter_mut() {
            col.component_mul_assign(&self.row_sums);
        }
        out - kb
    }
}

/// Columns of the right operand processed per Gram block; keeps the block in cache.
const BLOCK: usize = 64;

/// Row sums of K and Kᵀc for K[i, j] = k(aᵢ, bⱼ), without storing K.
fn fused_cross(a: &DMatrix<f64>, a_sq: &[f64], b: &DMatrix<f64>, b_sq: &[f64], c: &DMatrix<f64>, cfg: &KernelConfig) -> (DVector<f64>, DMatrix<f64>) {
    let (n, m, p) = (a.nrows(), b.nrows(), c.ncols());
    let scale = -0.5 / cfg.bandwidth();
    let mut row_sums = DVector::zeros(n);
    let mut ktc = DMatrix::zeros(m, p);
    let cs = c.as_slice();
    let mut acc = vec![0.0; p];
    for j0 in (0..m).step_by(BLOCK) {
        let bs = BLOCK.min(m - j0);
        let g = a * b.rows(j0, bs).transpose();
        for (jj, col) in g.as_slice().chunks_exact(n).enumerate() {
            let j = j0 + jj;
            acc.iter_mut().for_each(|v| *v = 0.0);
            for (i, (gij, rs)) in col.iter().zip(row_sums.iter_mut()).enumerate() {
                let k = (scale * (a_sq[i] + b_sq[j] - 2.0 * gij).max(0.0)).exp();
                *rs += k;
                for (q, slot) in acc.iter_mut().enumerate() {
                    *slot += k * cs[q * n + i];
                }
            }
            for (q, v) in acc.iter().enumerate() {
                ktc[(j, q)] = *v;
            }
        }
    }
    (row_sums, ktc)
}

/// Row sums of K and K c for the within-sample kernel (zero diagonal).
fn fused_within(a: &DMatrix<f64>, a_sq: &[f64], c: &DMatrix<f64>, cfg: &KernelConfig) -> (DVector<f64>, DMatrix<f64>) {
    let (n, p) = (a.nrows(), c.ncols());
    let scale = -0.5 / cfg.bandwidth();
    let mut row_sums = vec![0.0; n];
    let mut kc = vec![0.0; n * p];
    let cs = c.as_slice();
    let mut acc = vec![0.0; p];
    for j0 in (0..n).step_by(BLOCK) {
        let bs = BLOCK.min(n - j0);
        // only rows i < j of each column are needed
        let rows = j0 + bs;
        let g = a.rows(0, rows) * a.rows(j0, bs).transpose();
        for (jj, col) in g.as_slice().chunks_exact(rows).enumerate() {
            let j = j0 + jj;
            acc.iter_mut().for_each(|v| *v = 0.0);
            let mut col_sum = 0.0;
            for (i, gij) in col[..j].iter().enumerate() {
                let k = (scale * (a_sq[i] + a_sq[j] - 2.0 * gij).max(0.0)).exp();
                row_sums[i] += k;
                col_sum += k;
                for (q, slot) in acc.iter_mut().enumerate() {
                    *slot += k * cs[q * n + i];
                    kc[q * n + i] += k * cs[q * n + j];
                }
            }
            row_sums[j] += col_sum;
            for (q, v) in acc.iter().enumerate() {
                kc[q * n + j] += v;
            }
        }
    }
    (DVector::from_vec(row_sums), DMatrix::from_vec(n, p, kc))
}

fn scale_rows(c: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut out = c.clone();
    for mut col in out.column_iter_mut() {
        col.component_mul_assign(w);
    }
    out
}

/// Observed data prepared once for repeated MMD-type evaluations: the
/// data-only yy term, squared norms, and second-order statistics.
#[derive(Debug, Clone)]
pub struct PreparedTarget {
    y: DMatrix<f64>,
    y_sq: DVector<f64>,
    yy_term: f64,
    cfg: KernelConfig,
}

impl PreparedTarget {
    pub fn new(y: &Sample, cfg: &KernelConfig) -> Result<Self> {
        require_count(y, 2)?;
        let m = y.count() as f64;
        let mat = row_matrix(y);
        Ok(Self {
            y_sq: row_sq_norms(&mat),
            y: mat,
            yy_term: offdiag_sum(y, cfg) / (m * (m - 1.0)),
            cfg: *cfg,
        })
    }

    pub fn count(&self) -> usize {
        self.y.nrows()
    }

    pub fn dim(&self) -> usize {
        self.y.ncols()
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.cfg
    }

    /// (1/(m(m−1))) Σ_{i≠j} k(yᵢ, yⱼ).
    pub fn yy_term(&self) -> f64 {
        self.yy_term
    }

    /// Empirical MMD of `x` against the data, and its gradient with respect
    /// to every point of `x` (row i is ∂/∂xᵢ).
    pub fn mmd_point_gradient(&self, x: &Sample) -> Result<(f64, DMatrix<f64>)> {
        require_count(x, 2)?;
        check_dim("sample", self.dim(), x.dim())?;
        let n = x.count() as f64;
        let m = self.count() as f64;
        let xm = row_matrix(x);
        let x_sq = row_sq_norms(&xm);
        let kxx = KernelBlock::within(&xm, &x_sq, &self.cfg);
        let kxy = KernelBlock::cross(&xm, &x_sq, &self.y, &self.y_sq, &self.cfg);
        let value = kxx.total() / (n * (n - 1.0)) + self.yy_term - 2.0 * kxy.total() / (n * m);

        let s2 = self.cfg.bandwidth();
        let gxx = kxx.point_gradient(&xm, &xm);
        let gxy = kxy.point_gradient(&xm, &self.y);
        let grad = gxx * (-2.0 / (n * (n - 1.0) * s2)) + gxy * (2.0 / (n * m * s2));
        Ok((value, grad))
    }

    /// Empirical MMD between fakes `model(latent)` and the data, differentiated
    /// through the generator with the latent noise held fixed.
    pub fn empirical_mmd_eval(&self, model: &ParametricModel, latent: &Latent) -> Result<EstimatorEval> {
        let x = push_forward(model, latent, 0)?;
        require_count(&x, 2)?;
        check_dim("sample", self.dim(), x.dim())?;
        let n = x.count() as f64;
        let m = self.count() as f64;
        let xm = row_matrix(&x);
        let x_sq = row_sq_norms(&xm);
        // ∂xᵢ/∂θ is linear in per-point weights c (n×p); contracting the
        // point gradients with c avoids forming them.
        let c = latent_weights(model, latent)?;
        let (xx_rows, kxx_c) = fused_within(&xm, x_sq.as_slice(), &c, &self.cfg);
        let (xy_rows, kxy_t_c) = fused_cross(&xm, x_sq.as_slice(), &self.y, self.y_sq.as_slice(), &c, &self.cfg);
        let value = xx_rows.sum() / (n * (n - 1.0)) + self.yy_term - 2.0 * xy_rows.sum() / (n * m);

        let s2 = self.cfg.bandwidth();
        let gxx = xm.tr_mul(&scale_rows(&c, &xx_rows)) - xm.tr_mul(&kxx_c);
        let gxy = xm.tr_mul(&scale_rows(&c, &xy_rows)) - self.y.tr_mul(&kxy_t_c);
        let g = gxx * (-2.0 / (n * (n - 1.0) * s2)) + gxy * (2.0 / (n * m * s2));
        Ok(EstimatorEval { value, gradient: DVector::from_column_slice(g.as_slice()) })
    }

    /// One-sided MMD: the model side of the U-statistic replaced by its
    /// exact expectation under the model.
    pub fn osmmd(&self, model: &ParametricModel) -> Result<EstimatorEval> {
        check_dim("model", self.dim(), model.dim())?;
        let (exx, exx_grad, cross, cross_grad) = match model {
            ParametricModel::Mean(mm) => self.osmmd_mean(mm)?,
            ParametricModel::Cov(cm) => self.osmmd_cov(cm),
            ParametricModel::Gmm(gm) => self.osmmd_gmm(gm)?,
            ParametricModel::Unmixing(_) => {
                return Err(Error::Unsupported("one-sided MMD has no closed form for the unmixing model".into()))
            }
        };
        let m = self.count() as f64;
        Ok(EstimatorEval {
            value: exx + self.yy_term - 2.0 * cross / m,
            gradient: exx_grad - cross_grad * (2.0 / m),
        })
    }

    /// Returns (E k(X,X'), its gradient, Σⱼ E k(X,yⱼ), its gradient).
    fn osmmd_mean(&self, model: &MeanModel) -> Result<(f64, DVector<f64>, f64, DVector<f64>)> {
        let d = model.dim();
        let s2 = self.cfg.bandwidth();
        let eye = DMatrix::<f64>::identity(d, d);
        let self_chol = spd_cholesky(&(&model.sigma_cov * 2.0 + &eye * s2), "2·covariance + bandwidth·I")?;
        let exx = (-0.5 * (log_det(&self_chol) - d as f64 * s2.ln())).exp();
        let chol = spd_cholesky(&(&model.sigma_cov + &eye * s2), "covariance + bandwidth·I")?;
        let q = (-0.5 * (log_det(&chol) - d as f64 * s2.ln())).exp();
        let mut total = 0.0;
        let mut weighted = DVector::zeros(d);
        for j in 0..self.count() {
            let diff = &model.mu - self.y.row(j).transpose();
            let solved = chol.solve(&diff);
            let e = (-0.5 * diff.dot(&solved)).exp();
            total += e;
            weighted.axpy(-e, &solved, 1.0);
        }
        Ok((exx, DVector::zeros(d), q * total, weighted * q))
    }

    fn osmmd_cov(&self, model: &LowRankCovModel) -> (f64, DVector<f64>, f64, DVector<f64>) {
        let d = model.dim() as f64;
        let s2 = self.cfg.bandwidth();
        let a = &model.a;
        let n = a.norm_squared();
        let eps2 = model.epsilon * model.epsilon;

        let c = 2.0 * eps2 + s2;
        let k = (s2 / c).powf(0.5 * d);
        let r = 2.0 * n / c;
        let exx = k / (1.0 + r).sqrt();
        let exx_grad = a * (-(2.0 * k / c) * (1.0 + r).powf(-1.5));

        let b = eps2 + s2;
        let big_d = b + n;
        let pref = (s2 / b).powf(0.5 * d) * (b / big_d).sqrt();
        let u_all = &self.y * a;
        let mut total = 0.0;
        let mut coef_a = 0.0;
        let mut y_weights = DVector::zeros(self.count());
        for j in 0..self.count() {
            let u = u_all[j];
            let e = pref * (-(self.y_sq[j] - u * u / big_d) / (2.0 * b)).exp();
            total += e;
            coef_a += e * (-1.0 / big_d - u * u / (b * big_d * big_d));
            y_weights[j] = e * u / (b * big_d);
        }
        let cross_grad = a * coef_a + self.y.transpose() * y_weights;
        (exx, exx_grad, total, cross_grad)
    }

    fn osmmd_gmm(&self, model: &SymGmmModel) -> Result<(f64, DVector<f64>, f64, DVector<f64>)> {
        let d = model.dim();
        let s2 = self.cfg.bandwidth();
        let eye = DMatrix::<f64>::identity(d, d);
        let mu = &model.mu;

        let self_chol = spd_cholesky(&(&model.sigma_cov * 2.0 + &eye * s2), "2·covariance + bandwidth·I")?;
        let p = (-0.5 * (log_det(&self_chol) - d as f64 * s2.ln())).exp();
        let w_mu = self_chol.solve(mu);
        let e2 = (-2.0 * mu.dot(&w_mu)).exp();
        let exx = 0.5 * p * (1.0 + e2);
        let exx_grad = w_mu * (-2.0 * p * e2);

        let chol = spd_cholesky(&(&model.sigma_cov + &eye * s2), "covariance + bandwidth·I")?;
        let q = (-0.5 * (log_det(&chol) - d as f64 * s2.ln())).exp();
        let mut total = 0.0;
        let mut acc = DVector::zeros(d);
        for j in 0..self.count() {
            let yj = self.y.row(j).transpose();
            let minus = mu - &yj;
            let plus = mu + &yj;
            let v_minus = chol.solve(&minus);
            let v_plus = chol.solve(&plus);
            let e_minus = (-0.5 * minus.dot(&v_minus)).exp();
            let e_plus = (-0.5 * plus.dot(&v_plus)).exp();
            total += e_minus + e_plus;
            acc.axpy(-e_minus, &v_minus, 1.0);
            acc.axpy(-e_plus, &v_plus, 1.0);
        }
        Ok((exx, exx_grad, 0.5 * q * total, acc * (0.5 * q)))
    }
}

/// Per-point weights c with ∂xᵢ/∂θ = cᵢ ⊗ I, one column per parameter block.
fn latent_weights(model: &ParametricModel, latent: &Latent) -> Result<DMatrix<f64>> {
    Ok(match (model, latent) {
        (ParametricModel::Mean(m), Latent::Gaussian { w }) => DMatrix::from_element(w.len() / m.dim(), 1, 1.0),
        (ParametricModel::Cov(_), Latent::RankOne { z, .. }) => DMatrix::from_column_slice(z.len(), 1, z),
        (ParametricModel::Gmm(_), Latent::Signed { s, .. }) => DMatrix::from_column_slice(s.len(), 1, s),
        (ParametricModel::Unmixing(um), Latent::Simplex { b, .. }) => {
            let r = um.rank();
            DMatrix::from_row_slice(b.len() / r, r, b)
        }
        _ => return Err(Error::InvalidArgument("latent kind does not match model family".into())),
    })
}

/// One-sided MMD of `model` against the data `y`.
pub fn osmmd(model: &ParametricModel, y: &Sample, cfg: &KernelConfig) -> Result<EstimatorEval> {
    PreparedTarget::new(y, cfg)?.osmmd(model)
}

/// Empirical MMD between `model(latent)` and `y` with its reparameterized gradient.
pub fn empirical_mmd_gradient(model: &ParametricModel, latent: &Latent, y: &Sample, cfg: &KernelConfig) -> Result<EstimatorEval> {
    PreparedTarget::new(y, cfg)?.empirical_mmd_eval(model, latent)
}

/// Data statistics reused across likelihood evaluations.
#[derive(Debug, Clone)]
pub struct LikelihoodData {
    y: DMatrix<f64>,
    mean: DVector<f64>,
    second_moment: DMatrix<f64>,
}

impl LikelihoodData {
    pub fn new(y: &Sample) -> Result<Self> {
        require_count(y, 1)?;
        Ok(Self { y: row_matrix(y), mean: y.mean(), second_moment: y.second_moment() })
    }

    pub fn dim(&self) -> usize {
        self.y.ncols()
    }

    /// Mean negative log density of the data under `model`, with gradient.
    pub fn nll(&self, model: &ParametricModel) -> Result<EstimatorEval> {
        check_dim("model", self.dim(), model.dim())?;
        match model {
            ParametricModel::Mean(mm) => self.nll_mean(mm),
            ParametricModel::Cov(cm) => self.nll_cov(cm),
            ParametricModel::Gmm(gm) => self.nll_gmm(gm),
            ParametricModel::Unmixing(_) => {
                Err(Error::Unsupported("likelihood of the unmixing model is not implemented".into()))
            }
        }
    }

    fn nll_mean(&self, model: &MeanModel) -> Result<EstimatorEval> {
        let d = model.dim() as f64;
        let chol = spd_cholesky(&model.sigma_cov, "covariance")?;
        let mu = &model.mu;
        let inv_mu = chol.solve(mu);
        let inv_mean = chol.solve(&self.mean);
        let trace = chol.solve(&self.second_moment).trace();
        let quad = trace - 2.0 * self.mean.dot(&inv_mu) + mu.dot(&inv_mu);
        let value = 0.5 * quad + 0.5 * (d * (2.0 * PI).ln() + log_det(&chol));
        Ok(EstimatorEval { value, gradient: inv_mu - inv_mean })
    }

    fn nll_cov(&self, model: &LowRankCovModel) -> Result<EstimatorEval> {
        if model.epsilon <= 0.0 {
            return Err(Error::LikelihoodUndefined(
                "the rank-one model with zero isotropic noise has no density".into(),
            ));
        }
        let d = model.dim() as f64;
        let eps2 = model.epsilon * model.epsilon;
        let a = &model.a;
        let n = a.norm_squared();
        let sa = &self.second_moment * a;
        let asa = a.dot(&sa);
        let big = eps2 + n;
        let value = 0.5 * d * (2.0 * PI).ln()
            + 0.5 * (d * eps2.ln() + (1.0 + n / eps2).ln())
            + (self.second_moment.trace() - asa / big) / (2.0 * eps2);
        let gradient = a * (1.0 / big + asa / (eps2 * big * big)) - sa / (eps2 * big);
        Ok(EstimatorEval { value, gradient })
    }

    fn nll_gmm(&self, model: &SymGmmModel) -> Result<EstimatorEval> {
        let d = model.dim() as f64;
        let chol = spd_cholesky(&model.sigma_cov, "covariance")?;
        let v = chol.solve(&model.mu);
        let t = &self.y * &v;
        let m = self.count() as f64;
        let mut logcosh_sum = 0.0;
        let mut tanh = DVector::zeros(t.len());
        for (i, ti) in t.iter().enumerate() {
            logcosh_sum += logcosh(*ti);
            tanh[i] = ti.tanh();
        }
        let trace = chol.solve(&self.second_moment).trace();
        let value = 0.5 * (d * (2.0 * PI).ln() + log_det(&chol)) + 0.5 * trace + 0.5 * model.mu.dot(&v)
            - logcosh_sum / m;
        let weighted = self.y.transpose() * tanh / m;
        Ok(EstimatorEval { value, gradient: v - chol.solve(&weighted) })
    }

    pub fn count(&self) -> usize {
        self.y.nrows()
    }
}

/// log cosh t without overflow.
fn logcosh(t: f64) -> f64 {
    let a = t.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Mean negative log-likelihood of `y` under `model`.
pub fn nll(model: &ParametricModel, y: &Sample) -> Result<EstimatorEval> {
    LikelihoodData::new(y)?.nll(model)
}
