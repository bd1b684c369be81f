use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::PreparedTarget;
use crate::kernel::KernelConfig;
use crate::models::{self, draw_latent, ParametricModel, Sample, UnmixingModel};
use crate::optimize::{run_descent, OptimizerConfig};
use crate::rng;

/// Largest rank for which [`permutation_distance`] enumerates all r! matchings.
pub const MAX_PERMUTATION_RANK: usize = 8;

/// min over column permutations π of Σᵢ ‖âᵢ − a*_{πᵢ}‖².
pub fn permutation_distance(a_hat: &DMatrix<f64>, a_star: &DMatrix<f64>) -> Result<f64> {
    if a_hat.shape() != a_star.shape() {
        return Err(Error::InvalidArgument(format!(
            "shape mismatch: {:?} vs {:?}",
            a_hat.shape(),
            a_star.shape()
        )));
    }
    let r = a_hat.ncols();
    if r > MAX_PERMUTATION_RANK {
        return Err(Error::Unsupported(format!("rank {r} exceeds the enumeration bound {MAX_PERMUTATION_RANK}")));
    }
    let cost = DMatrix::from_fn(r, r, |i, j| (a_hat.column(i) - a_star.column(j)).norm_squared());
    Ok((0..r)
        .permutations(r)
        .map(|p| p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum::<f64>())
        .fold(f64::INFINITY, f64::min))
}

/// Simplified vertex component analysis.
///
/// For r ≥ 2 the points are projected (uncentered) onto their top-r singular
/// subspace; vertices are then picked one at a time as argmax |fᵀxᵢ| for a
/// random direction f orthogonal to the vertices already chosen. For r = 1 the
/// data is centered and the point with the largest |projection| on the first
/// principal direction is returned. Columns of the result are data points.
pub fn vca_init(x: &Sample, r: usize, seed: u64) -> Result<DMatrix<f64>> {
    if r < 1 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    if x.count() < r {
        return Err(Error::Init(format!("{} points cannot span rank {r}", x.count())));
    }
    let data = DMatrix::from_row_slice(x.count(), x.dim(), x.as_flat());
    let pick = |indices: &[usize]| DMatrix::from_fn(x.dim(), indices.len(), |k, j| data[(indices[j], k)]);

    if r == 1 {
        let centered = {
            let mean = data.row_mean();
            let mut c = data.clone();
            for mut row in c.row_iter_mut() {
                row -= &mean;
            }
            c
        };
        let svd = centered.clone().svd(false, true);
        let v_t = svd.v_t.expect("requested V");
        let top = (0..svd.singular_values.len()).max_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
        let Some(top) = top.filter(|&t| svd.singular_values[t] > 0.0) else {
            return Err(Error::Init("data has no spread".into()));
        };
        let proj = &centered * v_t.row(top).transpose();
        let best = proj.iamax();
        return Ok(pick(&[best]));
    }

    let svd = data.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    if order.len() < r || svd.singular_values[order[r - 1]] <= 1e-10 * svd.singular_values[order[0]] {
        return Err(Error::Init(format!("data has rank below {r}")));
    }
    let basis = DMatrix::from_fn(x.dim(), r, |k, j| v_t[(order[j], k)]);
    let projected = &data * basis;

    let mut rng = rng::stream(seed);
    let mut chosen: Vec<usize> = Vec::with_capacity(r);
    for _ in 0..r {
        let mut f = DVector::from_fn(r, |_, _| rng.sample::<f64, _>(StandardNormal));
        if !chosen.is_empty() {
            let span = DMatrix::from_fn(r, chosen.len(), |k, j| projected[(chosen[j], k)]);
            let q = span.qr().q();
            f -= &q * (q.transpose() * &f);
        }
        let scores = &projected * f;
        let best = scores.iamax();
        if chosen.contains(&best) {
            return Err(Error::Init("vertex selection stalled on a repeated point".into()));
        }
        chosen.push(best);
    }
    Ok(pick(&chosen))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnmixingConfig {
    pub dim: usize,
    pub rank: usize,
    /// Observed points per trial.
    pub points: usize,
    pub noise_var: f64,
    pub trials: usize,
    pub epochs: usize,
    /// Fake points drawn per epoch.
    pub fakes: usize,
    pub lr: f64,
    pub bandwidth: f64,
    pub seed: u64,
}

impl UnmixingConfig {
    pub fn new(noise_var: f64, trials: usize, seed: u64) -> Self {
        Self {
            dim: 10,
            rank: 3,
            points: 100,
            noise_var,
            trials,
            epochs: 5000,
            fakes: 256,
            lr: 0.1,
            bandwidth: 0.1,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: &str| Err(Error::config(field, msg));
        if self.trials == 0 {
            return fail("trials", "must be at least 1");
        }
        if self.rank == 0 || self.rank > MAX_PERMUTATION_RANK || self.rank > self.dim {
            return fail("rank", "must be between 1 and min(dim, 8)");
        }
        if self.points < self.rank.max(2) {
            return fail("points", "must be at least max(rank, 2)");
        }
        if self.fakes < 2 {
            return fail("fakes", "must be at least 2");
        }
        if !(self.noise_var >= 0.0) {
            return fail("noise_var", "must be non-negative");
        }
        OptimizerConfig::adam(self.lr, self.epochs).validate().or_else(|_| fail("lr", "learning rate must be positive and epochs ≥ 1"))?;
        KernelConfig::new(self.bandwidth).map(|_| ()).or_else(|_| fail("bandwidth", "must be positive"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub mean_dist: f64,
    pub std_dist: f64,
    pub trials: usize,
    pub distances: Vec<f64>,
}

impl MethodSummary {
    fn from_distances(method: &str, distances: Vec<f64>) -> Self {
        let n = distances.len() as f64;
        let mean = distances.iter().sum::<f64>() / n;
        let std = if distances.len() > 1 {
            (distances.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { method: method.to_string(), mean_dist: mean, std_dist: std, trials: distances.len(), distances }
    }
}

/// Distances for the initialization ("vca") and the trained estimate ("mmd").
#[derive(Debug, Clone, PartialEq)]
pub struct UnmixingReport {
    pub noise_var: f64,
    pub methods: Vec<MethodSummary>,
}

impl UnmixingReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }
}

fn unmixing_trial(cfg: &UnmixingConfig, trial: usize) -> Result<(f64, f64)> {
    let seed = rng::derive_seed(cfg.seed, trial as u64);
    let mut truth_rng = rng::stream(rng::derive_seed(seed, 0));
    let truth = ParametricModel::Unmixing(UnmixingModel::random(cfg.dim, cfg.rank, cfg.noise_var, &mut truth_rng)?);
    let ParametricModel::Unmixing(ref truth_model) = truth else { unreachable!() };
    let x = models::sample(&truth, cfg.points, rng::derive_seed(seed, 1))?;
    let init = vca_init(&x, cfg.rank, rng::derive_seed(seed, 2))?;
    let vca_dist = permutation_distance(&init, &truth_model.a_matrix)?;

    let target = PreparedTarget::new(&x, &KernelConfig::new(cfg.bandwidth)?)?;
    let d = cfg.dim * cfg.rank;
    let nan = || (f64::NAN, DVector::from_element(d, f64::NAN));
    let traj = run_descent(
        |step, theta| {
            let Ok(model) = truth.with_params(theta) else { return nan() };
            let mut r = rng::stream(rng::derive_path(seed, &[3, step as u64]));
            let latent = draw_latent(&model, cfg.fakes, &mut r);
            match target.empirical_mmd_eval(&model, &latent) {
                Ok(e) => (e.value, e.gradient),
                Err(_) => nan(),
            }
        },
        &DVector::from_column_slice(init.as_slice()),
        &OptimizerConfig::adam(cfg.lr, cfg.epochs),
    );
    let mmd_dist = match traj {
        Ok(t) => {
            let a_hat = DMatrix::from_column_slice(cfg.dim, cfg.rank, t.final_theta().as_slice());
            permutation_distance(&a_hat, &truth_model.a_matrix)?
        }
        Err(Error::Diverged { .. }) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    Ok((vca_dist, mmd_dist))
}

/// Learns the mixing matrix A of x = A b + w (b ~ Dirichlet(1), w ~ N(0, σ_w² I))
/// by Adam on the empirical MMD with fresh fakes each epoch, starting from
/// [`vca_init`]. The noise variance is treated as known.
pub fn unmixing_experiment(cfg: &UnmixingConfig) -> Result<UnmixingReport> {
    cfg.validate()?;
    let results: Vec<(f64, f64)> = (0..cfg.trials).into_par_iter().map(|t| unmixing_trial(cfg, t)).collect::<Result<_>>()?;
    let (vca, mmd): (Vec<f64>, Vec<f64>) = results.into_iter().unzip();
    Ok(UnmixingReport {
        noise_var: cfg.noise_var,
        methods: vec![MethodSummary::from_distances("vca", vca), MethodSummary::from_distances("mmd", mmd)],
    })
}
