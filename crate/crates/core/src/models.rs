//! Parametric families and their exact samplers.
//!
//! Every sampler is written as a push-forward of a family-specific latent
//! draw ([`Latent`]). Keeping the latent noise around lets the finite-sample
//! estimators differentiate a fake sample with respect to the model
//! parameters while the noise stays frozen.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{check_dim, inv_sqrt_spd, spd_cholesky};
use crate::rng::{self, StreamRng};

/// N(μ, Σ) with Σ known.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanModel {
    pub mu: DVector<f64>,
    pub sigma_cov: DMatrix<f64>,
    chol_l: DMatrix<f64>,
}

impl MeanModel {
    pub fn new(mu: DVector<f64>, sigma_cov: DMatrix<f64>) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::InvalidModel("dimension must be at least 1".into()));
        }
        check_dim("covariance", mu.len(), sigma_cov.nrows())?;
        let chol_l = spd_cholesky(&sigma_cov, "covariance")?.l();
        Ok(Self { mu, sigma_cov, chol_l })
    }

    pub fn isotropic(mu: DVector<f64>) -> Self {
        let d = mu.len();
        Self::new(mu, DMatrix::identity(d, d)).expect("identity covariance is SPD")
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Same covariance, different mean.
    pub fn with_mu(&self, mu: DVector<f64>) -> Result<Self> {
        check_dim("mean", self.dim(), mu.len())?;
        Ok(Self { mu, ..self.clone() })
    }

    pub(crate) fn chol_l(&self) -> &DMatrix<f64> {
        &self.chol_l
    }
}

/// N(0, a aᵀ + ε² I).
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankCovModel {
    pub a: DVector<f64>,
    pub epsilon: f64,
}

impl LowRankCovModel {
    pub fn new(a: DVector<f64>, epsilon: f64) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::InvalidModel("dimension must be at least 1".into()));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidModel(format!("noise floor must be finite and >= 0, got {epsilon}")));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("loading vector has non-finite entries".into()));
        }
        Ok(Self { a, epsilon })
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn with_a(&self, a: DVector<f64>) -> Result<Self> {
        check_dim("loading vector", self.dim(), a.len())?;
        Self::new(a, self.epsilon)
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        &self.a * self.a.transpose() + DMatrix::identity(d, d) * self.epsilon.powi(2)
    }
}

/// ½·N(μ, Σ) + ½·N(−μ, Σ) with Σ known.
#[derive(Debug, Clone, PartialEq)]
pub struct SymGmmModel {
    pub mu: DVector<f64>,
    pub sigma_cov: DMatrix<f64>,
    chol_l: DMatrix<f64>,
}

impl SymGmmModel {
    pub fn new(mu: DVector<f64>, sigma_cov: DMatrix<f64>) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::InvalidModel("dimension must be at least 1".into()));
        }
        check_dim("covariance", mu.len(), sigma_cov.nrows())?;
        let chol_l = spd_cholesky(&sigma_cov, "covariance")?.l();
        Ok(Self { mu, sigma_cov, chol_l })
    }

    pub fn isotropic(mu: DVector<f64>) -> Self {
        let d = mu.len();
        Self::new(mu, DMatrix::identity(d, d)).expect("identity covariance is SPD")
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn with_mu(&self, mu: DVector<f64>) -> Result<Self> {
        check_dim("mean", self.dim(), mu.len())?;
        Ok(Self { mu, ..self.clone() })
    }

    pub(crate) fn chol_l(&self) -> &DMatrix<f64> {
        &self.chol_l
    }
}

/// x = A b + w with b ~ Dirichlet(1_r) and w ~ N(0, σ_w² I).
#[derive(Debug, Clone, PartialEq)]
pub struct UnmixingModel {
    /// d × r, columns are endmembers.
    pub a_matrix: DMatrix<f64>,
    pub noise_var: f64,
}

impl UnmixingModel {
    pub fn new(a_matrix: DMatrix<f64>, noise_var: f64) -> Result<Self> {
        let (d, r) = a_matrix.shape();
        if r < 1 || d < r {
            return Err(Error::InvalidModel(format!("need d >= r >= 1, got d={d}, r={r}")));
        }
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(Error::InvalidModel(format!("noise variance must be >= 0, got {noise_var}")));
        }
        Ok(Self { a_matrix, noise_var })
    }

    /// Ground truth with i.i.d. standard normal endmembers, redrawn until full column rank.
    pub fn random(d: usize, r: usize, noise_var: f64, rng: &mut StreamRng) -> Result<Self> {
        if r < 2 || d < r {
            return Err(Error::InvalidModel(format!("need d >= r >= 2, got d={d}, r={r}")));
        }
        loop {
            let a = DMatrix::from_fn(d, r, |_, _| rng.sample::<f64, _>(StandardNormal));
            let sv = a.clone().svd(false, false).singular_values;
            let max = sv.max();
            if sv.min() > 1e-8 * max {
                return Self::new(a, noise_var);
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.a_matrix.nrows()
    }

    pub fn rank(&self) -> usize {
        self.a_matrix.ncols()
    }
}

/// The families the estimators and experiments understand.
#[derive(Debug, Clone, PartialEq)]
pub enum ParametricModel {
    Mean(MeanModel),
    Cov(LowRankCovModel),
    Gmm(SymGmmModel),
    Unmixing(UnmixingModel),
}

impl ParametricModel {
    pub fn dim(&self) -> usize {
        match self {
            ParametricModel::Mean(m) => m.dim(),
            ParametricModel::Cov(m) => m.dim(),
            ParametricModel::Gmm(m) => m.dim(),
            ParametricModel::Unmixing(m) => m.dim(),
        }
    }

    /// The unknown parameter θ as a flat vector (column-major for the unmixing matrix).
    pub fn params(&self) -> DVector<f64> {
        match self {
            ParametricModel::Mean(m) => m.mu.clone(),
            ParametricModel::Cov(m) => m.a.clone(),
            ParametricModel::Gmm(m) => m.mu.clone(),
            ParametricModel::Unmixing(m) => DVector::from_column_slice(m.a_matrix.as_slice()),
        }
    }

    pub fn param_len(&self) -> usize {
        match self {
            ParametricModel::Unmixing(m) => m.dim() * m.rank(),
            other => other.dim(),
        }
    }

    /// Same known quantities, new θ.
    pub fn with_params(&self, theta: &DVector<f64>) -> Result<Self> {
        check_dim("parameter vector", self.param_len(), theta.len())?;
        Ok(match self {
            ParametricModel::Mean(m) => ParametricModel::Mean(m.with_mu(theta.clone())?),
            ParametricModel::Cov(m) => ParametricModel::Cov(m.with_a(theta.clone())?),
            ParametricModel::Gmm(m) => ParametricModel::Gmm(m.with_mu(theta.clone())?),
            ParametricModel::Unmixing(m) => ParametricModel::Unmixing(UnmixingModel::new(
                DMatrix::from_column_slice(m.dim(), m.rank(), theta.as_slice()),
                m.noise_var,
            )?),
        })
    }

    pub fn analytic_mean(&self) -> DVector<f64> {
        match self {
            ParametricModel::Mean(m) => m.mu.clone(),
            ParametricModel::Cov(m) => DVector::zeros(m.dim()),
            ParametricModel::Gmm(m) => DVector::zeros(m.dim()),
            ParametricModel::Unmixing(m) => {
                let r = m.rank();
                &m.a_matrix * DVector::from_element(r, 1.0 / r as f64)
            }
        }
    }

    pub fn analytic_covariance(&self) -> DMatrix<f64> {
        match self {
            ParametricModel::Mean(m) => m.sigma_cov.clone(),
            ParametricModel::Cov(m) => m.covariance(),
            ParametricModel::Gmm(m) => &m.sigma_cov + &m.mu * m.mu.transpose(),
            ParametricModel::Unmixing(m) => {
                let r = m.rank() as f64;
                let denom = r * r * (r + 1.0);
                let cov_b = DMatrix::from_fn(m.rank(), m.rank(), |i, j| {
                    if i == j {
                        (r - 1.0) / denom
                    } else {
                        -1.0 / denom
                    }
                });
                let d = m.dim();
                &m.a_matrix * cov_b * m.a_matrix.transpose() + DMatrix::identity(d, d) * m.noise_var
            }
        }
    }
}

/// A finite set of points in R^d, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    points: Vec<f64>,
    dim: usize,
    pub seed: u64,
}

impl Sample {
    pub fn from_flat(points: Vec<f64>, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("sample dimension must be at least 1".into()));
        }
        if points.is_empty() || points.len() % dim != 0 {
            return Err(Error::InvalidArgument(format!(
                "flat buffer of length {} does not hold a whole number of {dim}-dimensional points",
                points.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("sample contains non-finite coordinates".into()));
        }
        Ok(Self { points, dim, seed })
    }

    pub fn from_rows(rows: &[Vec<f64>], seed: u64) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidArgument("rows have differing lengths".into()));
        }
        Self::from_flat(rows.concat(), dim, seed)
    }

    /// One-dimensional sample from scalars.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::from_flat(values.to_vec(), 1, 0)
    }

    pub fn count(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }

    /// count × d matrix copy.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.count(), self.dim, &self.points)
    }

    pub fn translated(&self, shift: &[f64]) -> Self {
        let points = self
            .points
            .chunks_exact(self.dim)
            .flat_map(|p| p.iter().zip(shift).map(|(a, b)| a + b))
            .collect();
        Self { points, dim: self.dim, seed: self.seed }
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut acc = DVector::zeros(self.dim);
        for p in self.iter() {
            for (a, v) in acc.iter_mut().zip(p) {
                *a += v;
            }
        }
        acc / self.count() as f64
    }

    /// Sample covariance with the n − 1 denominator.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let mut acc = DMatrix::zeros(self.dim, self.dim);
        for p in self.iter() {
            let c = DVector::from_iterator(self.dim, p.iter().zip(mean.iter()).map(|(a, b)| a - b));
            acc.syger(1.0, &c, &c, 1.0);
        }
        acc.fill_upper_triangle_with_lower_triangle();
        acc / (self.count() as f64 - 1.0)
    }

    /// Second-moment matrix (1/n) Σ yᵢ yᵢᵀ.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.dim, self.dim);
        for p in self.iter() {
            let c = DVector::from_column_slice(p);
            acc.syger(1.0, &c, &c, 1.0);
        }
        acc.fill_upper_triangle_with_lower_triangle();
        acc / self.count() as f64
    }

    /// One point per line, comma separated, no header.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for p in self.iter() {
            w.write_record(p.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|source| Error::Csv { path: path.to_path_buf(), source })
    }
}

/// Latent noise that, pushed through a model, yields a sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Latent {
    /// x = μ + L w.
    Gaussian { w: Vec<f64> },
    /// x = a z + ε w.
    RankOne { z: Vec<f64>, w: Vec<f64> },
    /// x = s μ + L w, s = ±1.
    Signed { s: Vec<f64>, w: Vec<f64> },
    /// x = A b + σ_w w, b on the simplex (row-major, count × r).
    Simplex { b: Vec<f64>, w: Vec<f64> },
}

impl Latent {
    pub fn count(&self, dim: usize) -> usize {
        match self {
            Latent::Gaussian { w } | Latent::RankOne { w, .. } | Latent::Signed { w, .. } | Latent::Simplex { w, .. } => {
                w.len() / dim
            }
        }
    }
}

fn normals(rng: &mut StreamRng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn draw_latent(model: &ParametricModel, count: usize, rng: &mut StreamRng) -> Latent {
    let d = model.dim();
    match model {
        ParametricModel::Mean(_) => Latent::Gaussian { w: normals(rng, count * d) },
        ParametricModel::Cov(_) => {
            let mut z = Vec::with_capacity(count);
            let mut w = Vec::with_capacity(count * d);
            for _ in 0..count {
                z.push(rng.sample::<f64, _>(StandardNormal));
                w.extend((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
            }
            Latent::RankOne { z, w }
        }
        ParametricModel::Gmm(_) => {
            let mut s = Vec::with_capacity(count);
            let mut w = Vec::with_capacity(count * d);
            for _ in 0..count {
                s.push(if rng.gen::<bool>() { 1.0 } else { -1.0 });
                w.extend((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
            }
            Latent::Signed { s, w }
        }
        ParametricModel::Unmixing(m) => {
            let r = m.rank();
            let mut b = Vec::with_capacity(count * r);
            let mut w = Vec::with_capacity(count * d);
            for _ in 0..count {
                let e: Vec<f64> = (0..r).map(|_| rng.sample::<f64, _>(Exp1)).collect();
                let total: f64 = e.iter().sum();
                b.extend(e.iter().map(|v| v / total));
                w.extend((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
            }
            Latent::Simplex { b, w }
        }
    }
}

fn lower_mul_add(l: &DMatrix<f64>, w: &[f64], offset: impl Fn(usize) -> f64, out: &mut Vec<f64>) {
    let d = l.nrows();
    for i in 0..d {
        let mut acc = offset(i);
        for j in 0..=i {
            acc += l[(i, j)] * w[j];
        }
        out.push(acc);
    }
}

/// Maps latent noise through the model's generator.
pub fn push_forward(model: &ParametricModel, latent: &Latent, seed: u64) -> Result<Sample> {
    let d = model.dim();
    let count = latent.count(d);
    let mut points = Vec::with_capacity(count * d);
    match (model, latent) {
        (ParametricModel::Mean(m), Latent::Gaussian { w }) => {
            for wi in w.chunks_exact(d) {
                lower_mul_add(m.chol_l(), wi, |k| m.mu[k], &mut points);
            }
        }
        (ParametricModel::Cov(m), Latent::RankOne { z, w }) => {
            for (zi, wi) in z.iter().zip(w.chunks_exact(d)) {
                points.extend((0..d).map(|k| m.a[k] * zi + m.epsilon * wi[k]));
            }
        }
        (ParametricModel::Gmm(m), Latent::Signed { s, w }) => {
            for (si, wi) in s.iter().zip(w.chunks_exact(d)) {
                lower_mul_add(m.chol_l(), wi, |k| si * m.mu[k], &mut points);
            }
        }
        (ParametricModel::Unmixing(m), Latent::Simplex { b, w }) => {
            let r = m.rank();
            let sd = m.noise_var.sqrt();
            for (bi, wi) in b.chunks_exact(r).zip(w.chunks_exact(d)) {
                points.extend((0..d).map(|k| {
                    let mix: f64 = (0..r).map(|j| m.a_matrix[(k, j)] * bi[j]).sum();
                    mix + sd * wi[k]
                }));
            }
        }
        _ => return Err(Error::InvalidArgument("latent kind does not match model family".into())),
    }
    Sample::from_flat(points, d, seed)
}

/// `count` i.i.d. draws from `model`, reproducible from `seed`.
pub fn sample(model: &ParametricModel, count: usize, seed: u64) -> Result<Sample> {
    if count < 1 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    let mut rng = rng::stream(seed);
    let latent = draw_latent(model, count, &mut rng);
    push_forward(model, &latent, seed)
}

/// Rewrites a mixture with covariance Σ as one with identity covariance and
/// mean Σ^{-1/2} μ. Returns the new model and Σ^{-1/2}.
pub fn whiten_gmm(model: &SymGmmModel) -> Result<(SymGmmModel, DMatrix<f64>)> {
    spd_cholesky(&model.sigma_cov, "covariance")?;
    let transform = inv_sqrt_spd(&model.sigma_cov);
    let mu = &transform * &model.mu;
    Ok((SymGmmModel::isotropic(mu), transform))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn e(d: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        v
    }

    #[test]
    fn rank_one_at_zero_noise_lies_on_a_line() {
        let model = ParametricModel::Cov(LowRankCovModel::new(e(2, 0), 0.0).unwrap());
        let s = sample(&model, 3, 7).unwrap();
        assert_eq!(s.count(), 3);
        for p in s.iter() {
            assert_eq!(p[1], 0.0);
        }
    }

    #[test]
    fn count_zero_is_rejected() {
        let model = ParametricModel::Mean(MeanModel::isotropic(e(2, 0)));
        assert!(matches!(sample(&model, 0, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn non_pd_covariance_is_rejected() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(MeanModel::new(e(2, 0), bad.clone()), Err(Error::InvalidModel(_))));
        assert!(matches!(SymGmmModel::new(e(2, 0), bad), Err(Error::InvalidModel(_))));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(MeanModel::new(e(2, 0), asym).is_err());
        assert!(LowRankCovModel::new(e(2, 0), -1.0).is_err());
    }

    #[test]
    fn sampling_is_reproducible() {
        let model = ParametricModel::Gmm(SymGmmModel::isotropic(DVector::from_vec(vec![1.0, -2.0])));
        assert_eq!(sample(&model, 50, 9).unwrap(), sample(&model, 50, 9).unwrap());
        assert_ne!(sample(&model, 50, 9).unwrap(), sample(&model, 50, 10).unwrap());
    }

    #[test]
    fn collapsed_mixture_has_zero_mean() {
        let model = ParametricModel::Gmm(SymGmmModel::isotropic(DVector::zeros(2)));
        let s = sample(&model, 200_000, 3).unwrap();
        let m = s.mean();
        // standard error 1/sqrt(2e5) ~ 2.2e-3
        assert!(m.norm() < 0.015, "mean {m}");
    }

    #[test]
    fn dirichlet_weights_sum_to_one() {
        let mut r = rng::stream(5);
        let model = ParametricModel::Unmixing(UnmixingModel::random(5, 3, 0.0, &mut r).unwrap());
        match draw_latent(&model, 100, &mut r) {
            Latent::Simplex { b, .. } => {
                for row in b.chunks_exact(3) {
                    assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                    assert!(row.iter().all(|v| *v >= 0.0));
                }
            }
            other => panic!("unexpected latent {other:?}"),
        }
    }

    #[test]
    fn whitening_identity_and_scalar_cases() {
        let m = SymGmmModel::isotropic(DVector::from_vec(vec![0.3, -1.0]));
        let (w, t) = whiten_gmm(&m).unwrap();
        assert_abs_diff_eq!(t, DMatrix::identity(2, 2), epsilon = 1e-12);
        assert_abs_diff_eq!(w.mu, m.mu, epsilon = 1e-12);

        let m = SymGmmModel::new(DVector::from_vec(vec![2.0, 0.0]), DMatrix::identity(2, 2) * 4.0).unwrap();
        let (w, _) = whiten_gmm(&m).unwrap();
        assert_abs_diff_eq!(w.mu, DVector::from_vec(vec![1.0, 0.0]), epsilon = 1e-12);
    }

    #[test]
    fn whitening_preserves_mahalanobis_norm() {
        let mut r = rng::stream(11);
        let b = DMatrix::from_fn(3, 3, |_, _| r.sample::<f64, _>(StandardNormal));
        let sigma = &b * b.transpose() + DMatrix::identity(3, 3) * 0.5;
        let mu = DVector::from_fn(3, |_, _| r.sample::<f64, _>(StandardNormal));
        let model = SymGmmModel::new(mu.clone(), sigma.clone()).unwrap();
        let (white, t) = whiten_gmm(&model).unwrap();
        let direct = mu.dot(&sigma.clone().lu().solve(&mu).unwrap());
        assert_abs_diff_eq!(white.mu.dot(&white.mu), direct, epsilon = 1e-10);
        let back = t.try_inverse().unwrap() * &white.mu;
        assert_abs_diff_eq!(back, mu, epsilon = 1e-10);
    }

    #[test]
    fn csv_export_has_no_header() {
        let s = Sample::from_rows(&[vec![1.5, -2.0], vec![0.25, 3.0]], 0).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1.5,-2\n0.25,3\n");
    }
}
