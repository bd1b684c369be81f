#![allow(dead_code)]

use mmd_landscape::{LowRankCovModel, MeanModel, ParametricModel, SymGmmModel};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn normal_vec(d: usize, r: &mut ChaCha20Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| r.sample::<f64, _>(StandardNormal))
}

pub fn random_spd(d: usize, r: &mut ChaCha20Rng) -> DMatrix<f64> {
    let b = DMatrix::from_fn(d, d, |_, _| r.sample::<f64, _>(StandardNormal));
    &b * b.transpose() / d as f64 + DMatrix::identity(d, d) * 0.3
}

/// Draws from a family without going through the library's samplers.
pub struct OracleSampler {
    kind: Kind,
    d: usize,
}

enum Kind {
    Shifted { mu: DVector<f64>, l: DMatrix<f64>, symmetric: bool },
    RankOne { a: DVector<f64>, eps: f64 },
}

impl OracleSampler {
    pub fn new(model: &ParametricModel) -> Self {
        let chol = |s: &DMatrix<f64>| s.clone().cholesky().expect("SPD covariance").l();
        let (kind, d) = match model {
            ParametricModel::Mean(m) => (Kind::Shifted { mu: m.mu.clone(), l: chol(&m.sigma_cov), symmetric: false }, m.mu.len()),
            ParametricModel::Gmm(m) => (Kind::Shifted { mu: m.mu.clone(), l: chol(&m.sigma_cov), symmetric: true }, m.mu.len()),
            ParametricModel::Cov(m) => (Kind::RankOne { a: m.a.clone(), eps: m.epsilon }, m.a.len()),
            ParametricModel::Unmixing(_) => panic!("oracle covers the Gaussian families"),
        };
        Self { kind, d }
    }

    pub fn draw(&self, r: &mut ChaCha20Rng, out: &mut [f64]) {
        let w = normal_vec(self.d, r);
        match &self.kind {
            Kind::Shifted { mu, l, symmetric } => {
                let sign = if *symmetric && r.gen::<bool>() { -1.0 } else { 1.0 };
                let x = mu * sign + l * w;
                out.copy_from_slice(x.as_slice());
            }
            Kind::RankOne { a, eps } => {
                let z: f64 = r.sample(StandardNormal);
                for i in 0..self.d {
                    out[i] = a[i] * z + eps * w[i];
                }
            }
        }
    }
}

pub fn kern(x: &[f64], y: &[f64], s2: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * s2)).exp()
}

/// Monte-Carlo estimate of E k(X,X') + E k(Y,Y') − 2 E k(X,Y) from `pairs`
/// independent quadruples, with its standard error.
pub fn mc_mmd(model: &ParametricModel, truth: &ParametricModel, s2: f64, pairs: usize, seed: u64) -> (f64, f64) {
    let (px, py) = (OracleSampler::new(model), OracleSampler::new(truth));
    let d = model.dim();
    let mut r = rng(seed);
    let (mut x1, mut x2, mut y1, mut y2) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..pairs {
        px.draw(&mut r, &mut x1);
        px.draw(&mut r, &mut x2);
        py.draw(&mut r, &mut y1);
        py.draw(&mut r, &mut y2);
        let h = kern(&x1, &x2, s2) + kern(&y1, &y2, s2) - kern(&x1, &y2, s2) - kern(&x2, &y1, s2);
        sum += h;
        sum_sq += h * h;
    }
    let n = pairs as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// A random (truth, parameter, σ²) configuration. Σ is random SPD for the
/// mean and mixture families; ε ∈ [0, 1) for the rank-one family.
pub fn random_config(family: &str, d: usize, r: &mut ChaCha20Rng) -> (ParametricModel, DVector<f64>, f64) {
    let s2 = r.gen_range(0.5..4.0);
    let truth = match family {
        "mean" => ParametricModel::Mean(MeanModel::new(normal_vec(d, r), random_spd(d, r)).unwrap()),
        "cov" => ParametricModel::Cov(LowRankCovModel::new(normal_vec(d, r), r.gen_range(0.0..1.0)).unwrap()),
        "gmm" => ParametricModel::Gmm(SymGmmModel::new(normal_vec(d, r), random_spd(d, r)).unwrap()),
        other => panic!("unknown family {other}"),
    };
    let theta = normal_vec(d, r);
    (truth, theta, s2)
}

/// Central differences with per-coordinate step 1e-5 (1 + |xᵢ|).
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let h = 1e-5 * (1.0 + x[i].abs());
        let (mut up, mut down) = (x.clone(), x.clone());
        up[i] += h;
        down[i] -= h;
        (f(&up) - f(&down)) / (2.0 * h)
    })
}

/// Central differences of a gradient, symmetrized.
pub fn fd_hessian(g: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>) -> DMatrix<f64> {
    let d = x.len();
    let mut h = DMatrix::zeros(d, d);
    for j in 0..d {
        let step = 1e-5 * (1.0 + x[j].abs());
        let (mut up, mut down) = (x.clone(), x.clone());
        up[j] += step;
        down[j] -= step;
        h.set_column(j, &((g(&up) - g(&down)) / (2.0 * step)));
    }
    (&h + h.transpose()) * 0.5
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}
