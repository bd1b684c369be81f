//! First-order descent, finite-difference checks and critical-point scanning.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sorted_eigen;
use crate::rng;

/// A smooth objective θ ↦ f(θ).
pub trait Objective {
    fn dim(&self) -> usize;

    fn value_and_gradient(&self, theta: &DVector<f64>) -> (f64, DVector<f64>);

    fn value(&self, theta: &DVector<f64>) -> f64 {
        self.value_and_gradient(theta).0
    }

    /// Analytic Hessian, when the objective has one.
    fn hessian(&self, _theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

impl<F> Objective for (usize, F)
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    fn dim(&self) -> usize {
        self.0
    }

    fn value_and_gradient(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        (self.1)(theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: Method,
    pub learning_rate: f64,
    pub iterations: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl OptimizerConfig {
    pub fn gd(learning_rate: f64, iterations: usize) -> Self {
        Self { method: Method::Gd, ..Self::adam(learning_rate, iterations) }
    }

    pub fn adam(learning_rate: f64, iterations: usize) -> Self {
        Self {
            method: Method::Adam,
            learning_rate,
            iterations,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.iterations < 1 {
            return Err(Error::InvalidArgument("iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub step: usize,
    pub theta: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
}

/// Every visited parameter, starting with the initial point at step 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub iterates: Vec<Iterate>,
}

impl Trajectory {
    pub fn final_theta(&self) -> &DVector<f64> {
        &self.iterates.last().expect("trajectory is never empty").theta
    }

    pub fn final_value(&self) -> f64 {
        self.iterates.last().expect("trajectory is never empty").value
    }

    /// Columns: step, param_0..param_{d-1}, value, grad_norm.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let d = self.iterates.first().map(|i| i.theta.len()).unwrap_or(0);
        let mut header = vec!["step".to_string()];
        header.extend((0..d).map(|i| format!("param_{i}")));
        header.push("value".into());
        header.push("grad_norm".into());
        w.write_record(&header)?;
        for it in &self.iterates {
            let mut row = vec![it.step.to_string()];
            row.extend(it.theta.iter().map(|v| v.to_string()));
            row.push(it.value.to_string());
            row.push(it.grad_norm.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct AdamState {
    m: DVector<f64>,
    v: DVector<f64>,
    t: i32,
}

/// Runs `cfg.iterations` steps from `init`. `eval(step, θ)` supplies the
/// value and gradient; taking the step index lets stochastic objectives draw
/// a fresh fake sample per epoch.
pub fn run_descent<F>(mut eval: F, init: &DVector<f64>, cfg: &OptimizerConfig) -> Result<Trajectory>
where
    F: FnMut(usize, &DVector<f64>) -> (f64, DVector<f64>),
{
    cfg.validate()?;
    let d = init.len();
    let mut theta = init.clone();
    let mut adam = AdamState { m: DVector::zeros(d), v: DVector::zeros(d), t: 0 };
    let mut iterates = Vec::with_capacity(cfg.iterations + 1);
    for step in 0..=cfg.iterations {
        let (value, grad) = eval(step, &theta);
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, reason: "non-finite objective or gradient".into() });
        }
        iterates.push(Iterate { step, theta: theta.clone(), value, grad_norm: grad.norm() });
        if step == cfg.iterations {
            break;
        }
        match cfg.method {
            Method::Gd => theta.axpy(-cfg.learning_rate, &grad, 1.0),
            Method::Adam => {
                adam.t += 1;
                let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
                adam.m.zip_apply(&grad, |m, g| *m = b1 * *m + (1.0 - b1) * g);
                adam.v.zip_apply(&grad, |v, g| *v = b2 * *v + (1.0 - b2) * g * g);
                let c1 = 1.0 - b1.powi(adam.t);
                let c2 = 1.0 - b2.powi(adam.t);
                for i in 0..d {
                    let m_hat = adam.m[i] / c1;
                    let v_hat = adam.v[i] / c2;
                    theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
                }
            }
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Diverged { step: step + 1, reason: "non-finite iterate".into() });
        }
    }
    Ok(Trajectory { iterates })
}

/// Convenience wrapper for deterministic objectives.
pub fn descend<O: Objective + ?Sized>(objective: &O, init: &DVector<f64>, cfg: &OptimizerConfig) -> Result<Trajectory> {
    run_descent(|_, theta| objective.value_and_gradient(theta), init, cfg)
}

/// Per-coordinate central-difference step h = 1e-5 (1 + |θᵢ|).
pub fn fd_step(x: f64) -> f64 {
    1e-5 * (1.0 + x.abs())
}

pub fn finite_diff_gradient<F>(f: F, point: &DVector<f64>) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut x = point.clone();
    DVector::from_fn(point.len(), |i, _| {
        let h = fd_step(point[i]);
        x[i] = point[i] + h;
        let up = f(&x);
        x[i] = point[i] - h;
        let down = f(&x);
        x[i] = point[i];
        (up - down) / (2.0 * h)
    })
}

/// Central differences of an analytic gradient, symmetrized.
pub fn finite_diff_hessian<F>(grad: F, point: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let d = point.len();
    let mut x = point.clone();
    let mut h = DMatrix::zeros(d, d);
    for j in 0..d {
        let step = fd_step(point[j]);
        x[j] = point[j] + step;
        let up = grad(&x);
        x[j] = point[j] - step;
        let down = grad(&x);
        x[j] = point[j];
        h.set_column(j, &((up - down) / (2.0 * step)));
    }
    (&h + h.transpose()) * 0.5
}

/// ‖a − b‖ / max(‖b‖, floor): relative error of `a` against reference `b`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(floor)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CriticalLabel {
    GlobalMinCandidate,
    LocalMax,
    StrictSaddle,
    Unresolved,
}

impl CriticalLabel {
    pub fn tag(&self) -> &'static str {
        match self {
            CriticalLabel::GlobalMinCandidate => "global-min-candidate",
            CriticalLabel::LocalMax => "local-max",
            CriticalLabel::StrictSaddle => "strict-saddle",
            CriticalLabel::Unresolved => "unresolved",
        }
    }
}

/// Eigenvalue threshold applied after scaling the Hessian to unit operator norm.
pub const CLASSIFY_TOL: f64 = 1e-10;
/// Gradient norm above which a point is refused by [`classify_critical`].
pub const CRITICAL_GRAD_TOL: f64 = 1e-6;
const MIN_VALUE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalPoint {
    pub location: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    /// Raw (unscaled) extreme Hessian eigenvalues.
    pub min_eig: f64,
    pub max_eig: f64,
    /// Unit eigenvector for `min_eig`.
    pub min_eig_vector: DVector<f64>,
    pub label: CriticalLabel,
}

fn hessian_of<O: Objective + ?Sized>(objective: &O, point: &DVector<f64>) -> DMatrix<f64> {
    objective
        .hessian(point)
        .unwrap_or_else(|| finite_diff_hessian(|x| objective.value_and_gradient(x).1, point))
}

/// Labels a critical point from the spectrum of its Hessian.
pub fn classify_critical<O: Objective + ?Sized>(objective: &O, point: &DVector<f64>) -> Result<CriticalPoint> {
    let (value, grad) = objective.value_and_gradient(point);
    let grad_norm = grad.norm();
    if !(grad_norm <= CRITICAL_GRAD_TOL) {
        return Err(Error::NotCritical { grad_norm, threshold: CRITICAL_GRAD_TOL });
    }
    let h = hessian_of(objective, point);
    let (values, vectors) = sorted_eigen(&h);
    let n = values.len();
    let min_eig = values[0];
    let max_eig = values[n - 1];
    let scale = min_eig.abs().max(max_eig.abs());
    let label = if scale == 0.0 || !scale.is_finite() {
        CriticalLabel::Unresolved
    } else {
        let (lo, hi) = (min_eig / scale, max_eig / scale);
        if lo < -CLASSIFY_TOL {
            if hi < CLASSIFY_TOL {
                CriticalLabel::LocalMax
            } else {
                CriticalLabel::StrictSaddle
            }
        } else if value <= MIN_VALUE_TOL {
            CriticalLabel::GlobalMinCandidate
        } else {
            CriticalLabel::Unresolved
        }
    };
    Ok(CriticalPoint {
        location: point.clone(),
        value,
        grad_norm,
        min_eig,
        max_eig,
        min_eig_vector: vectors.column(0).into_owned(),
        label,
    })
}

/// Outcome of [`scan_stationary`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    /// De-duplicated critical points in order of discovery.
    pub points: Vec<CriticalPoint>,
    /// Starts that did not reach the gradient tolerance inside the search region.
    pub dropped: usize,
}

pub const SCAN_GRAD_TOL: f64 = 1e-8;
pub const SCAN_DEDUP_RADIUS: f64 = 1e-4;
const SCAN_MAX_ITERS: usize = 300;

/// Minimizes ½‖∇f‖² from one start with Gauss–Newton steps (−H⁺∇f), falling
/// back to plain gradient steps on ½‖∇f‖² when the Newton step fails to
/// reduce it.
fn refine_to_critical<O: Objective + ?Sized>(objective: &O, start: &DVector<f64>, max_step: f64, escape: f64) -> Option<DVector<f64>> {
    let merit = |x: &DVector<f64>| {
        let (_, g) = objective.value_and_gradient(x);
        0.5 * g.norm_squared()
    };
    let mut x = start.clone();
    for _ in 0..SCAN_MAX_ITERS {
        let (_, g) = objective.value_and_gradient(&x);
        let gn = g.norm();
        if !gn.is_finite() || x.norm() > escape {
            return None;
        }
        if gn <= SCAN_GRAD_TOL {
            return Some(polish(objective, x, gn));
        }
        let h = hessian_of(objective, &x);
        let phi = 0.5 * gn * gn;
        let newton = newton_step(&h, &g);
        let fallback = -(&h * &g);
        let mut moved = false;
        for dir in [newton, fallback] {
            let len = dir.norm();
            if len == 0.0 || !len.is_finite() {
                continue;
            }
            let mut alpha = (max_step / len).min(1.0);
            if dir.dot(&(&h * &g)) >= 0.0 {
                // not a descent direction for ½‖∇f‖²
                continue;
            }
            let slope = dir.dot(&(&h * &g));
            for _ in 0..40 {
                let trial = &x + &dir * alpha;
                if merit(&trial) <= phi + 1e-4 * alpha * slope {
                    x = trial;
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if moved {
                break;
            }
        }
        if !moved {
            return None;
        }
    }
    None
}

/// −H⁺g through the eigendecomposition, ignoring near-null directions.
fn newton_step(h: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let (values, vectors) = sorted_eigen(h);
    let cutoff = 1e-12 * values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let proj = vectors.transpose() * g;
    &vectors * DVector::from_fn(values.len(), |i, _| if values[i].abs() > cutoff { -proj[i] / values[i] } else { 0.0 })
}

/// A few undamped Newton steps past the tolerance, kept while ‖∇f‖ keeps shrinking.
fn polish<O: Objective + ?Sized>(objective: &O, mut x: DVector<f64>, mut gn: f64) -> DVector<f64> {
    for _ in 0..5 {
        let (_, g) = objective.value_and_gradient(&x);
        let trial = &x + newton_step(&hessian_of(objective, &x), &g);
        let tn = objective.value_and_gradient(&trial).1.norm();
        if !(tn < gn) {
            break;
        }
        x = trial;
        gn = tn;
    }
    x
}

/// Multi-start search for critical points inside the ball of `domain_radius`.
///
/// Each start is drawn uniformly from the ball, refined to ‖∇f‖ ≤ 1e-8, and
/// kept unless it lies within [`SCAN_DEDUP_RADIUS`] of a point already found.
/// Starts that stall, hit the iteration cap, or settle outside the ball are
/// counted in [`ScanResult::dropped`]; the last case also rejects the flat
/// far field where the gradient vanishes without a critical point.
pub fn scan_stationary<O: Objective + ?Sized>(objective: &O, domain_radius: f64, starts: usize, seed: u64) -> Result<ScanResult> {
    if starts < 1 {
        return Err(Error::InvalidArgument("starts must be at least 1".into()));
    }
    if !(domain_radius > 0.0) {
        return Err(Error::InvalidArgument("domain radius must be positive".into()));
    }
    let d = objective.dim();
    let mut points: Vec<CriticalPoint> = Vec::new();
    let mut dropped = 0;
    for k in 0..starts {
        let mut r = rng::stream(rng::derive_seed(seed, k as u64));
        let dir = DVector::from_fn(d, |_, _| r.sample::<f64, _>(StandardNormal));
        let radius = domain_radius * r.gen::<f64>().powf(1.0 / d as f64);
        let start = dir.normalize() * radius;
        let refined = refine_to_critical(objective, &start, 0.25 * domain_radius, 4.0 * domain_radius);
        let Some(found) = refined.filter(|x| x.norm() <= domain_radius) else {
            dropped += 1;
            continue;
        };
        if points.iter().any(|p| (&p.location - &found).norm() < SCAN_DEDUP_RADIUS) {
            continue;
        }
        points.push(classify_critical(objective, &found)?);
    }
    Ok(ScanResult { points, dropped })
}
