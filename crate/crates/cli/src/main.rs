use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use mmd_landscape::closed_form::ClosedForm;
use mmd_landscape::harness::{
    self, emit_outputs, Estimator, EstimatorOverride, Family, Report, SweepAxis, SweepConfig, TrialSpec, UnmixingConfig,
};
use mmd_landscape::optimize::{scan_stationary, Method, OptimizerConfig};
use mmd_landscape::{rng, KernelConfig, ParametricModel};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "mmdl", version, about = "MMD landscapes and recovery experiments for Gaussian-family models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare analytic gradients and Hessians with central finite differences.
    CheckGrad(Common),
    /// Multi-start search for critical points of a closed-form objective.
    Landscape(Common),
    /// Run recovery trials for each requested estimator.
    Recover(Common),
    /// Success rate against sample size or noise level.
    Sweep(Common),
    /// Linear unmixing benchmark.
    Unmix(Common),
}

/// Flags shared by every subcommand. Each may also come from `--config`.
#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Common {
    /// JSON file with any of these settings; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    family: Option<Family>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated subset of mmd, osmmd, mle.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<Estimator>>,
    /// gd or adam.
    #[arg(long)]
    method: Option<String>,
    /// Sweep axis: m or epsilon.
    #[arg(long)]
    axis: Option<String>,
    /// Comma-separated sweep axis values.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    /// Comma-separated noise variances for unmixing.
    #[arg(long, value_delimiter = ',')]
    noise_var: Option<Vec<f64>>,
    /// Columns of the unmixing matrix.
    #[arg(long)]
    rank: Option<usize>,
    /// Random starts for the landscape scan.
    #[arg(long)]
    starts: Option<usize>,
    /// Per-estimator settings (config file only).
    #[arg(skip)]
    overrides: Option<BTreeMap<Estimator, EstimatorOverride>>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($field:ident),*) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )*
    };
}

impl Common {
    /// File values overlaid by explicitly given flags.
    fn resolve(self) -> Result<Self> {
        let Some(path) = self.config.clone() else { return Ok(self) };
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let mut base: Common = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column()))?;
        let top = self;
        overlay!(
            base, top, family, dim, bandwidth, lr, iters, m, n, epsilon, repeats, seed, out, estimators, method, axis,
            values, noise_var, rank, starts
        );
        base.config = top.config;
        Ok(base)
    }

    fn family(&self) -> Family {
        self.family.unwrap_or(Family::Mean)
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn method(&self) -> Result<Method> {
        match self.method.as_deref() {
            None | Some("adam") => Ok(Method::Adam),
            Some("gd") => Ok(Method::Gd),
            Some(other) => bail!("unknown method '{other}' (expected gd or adam)"),
        }
    }

    fn optimizer(&self, default_lr: f64, default_iters: usize) -> Result<OptimizerConfig> {
        let lr = self.lr.unwrap_or(default_lr);
        let iters = self.iters.unwrap_or(default_iters);
        Ok(match self.method()? {
            Method::Gd => OptimizerConfig::gd(lr, iters),
            Method::Adam => OptimizerConfig::adam(lr, iters),
        })
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::CheckGrad(c) => check_grad(&c.resolve()?),
        Command::Landscape(c) => landscape(&c.resolve()?),
        Command::Recover(c) => recover(&c.resolve()?),
        Command::Sweep(c) => sweep(&c.resolve()?),
        Command::Unmix(c) => unmix(&c.resolve()?),
    }
}

fn check_grad(c: &Common) -> Result<()> {
    let families = match c.family {
        Some(f) => vec![f],
        None => vec![Family::Mean, Family::Cov, Family::Gmm],
    };
    let results = harness::gradient_suites(&families, c.dim.unwrap_or(3), c.repeats.unwrap_or(20), c.seed())?;
    println!("{:<28} {:>6} {:>12} {:>10} {:>6}", "suite", "points", "max rel err", "tolerance", "status");
    for s in &results {
        println!(
            "{:<28} {:>6} {:>12.3e} {:>10.0e} {:>6}",
            s.name,
            s.points,
            s.max_error,
            s.tolerance,
            if s.passed() { "PASS" } else { "FAIL" }
        );
    }
    let failures = results.iter().filter(|s| !s.passed()).count();
    if failures > 0 {
        bail!("{failures} suite(s) exceeded tolerance");
    }
    Ok(())
}

fn closed_form_for(truth: &ParametricModel, kernel: KernelConfig) -> Result<ClosedForm> {
    Ok(match truth {
        ParametricModel::Mean(m) => ClosedForm::Mean(m.clone(), kernel),
        ParametricModel::Cov(m) => ClosedForm::Cov(m.clone(), kernel),
        ParametricModel::Gmm(m) => ClosedForm::Gmm(m.clone(), kernel),
        ParametricModel::Unmixing(_) => bail!("no closed form for the unmixing model"),
    })
}

fn landscape(c: &Common) -> Result<()> {
    let family = c.family();
    let d = c.dim.unwrap_or(2);
    let truth = harness::random_problem(family, d, c.epsilon.unwrap_or(0.0), c.seed())?;
    let kernel = KernelConfig::new(c.bandwidth.unwrap_or(1.0))?;
    let objective = closed_form_for(&truth, kernel)?;
    let radius = 2.0 * truth.params().norm().max(1.0);
    let scan = scan_stationary(&objective, radius, c.starts.unwrap_or(100), c.seed())?;
    println!("truth θ* = {:?}", truth.params().as_slice());
    println!("{:<22} {:>10} {:>12} {:>10} {:>12} {:>12}", "label", "‖θ‖", "value", "‖∇‖", "min eig", "max eig");
    let mut rows = Vec::new();
    for p in &scan.points {
        println!(
            "{:<22} {:>10.5} {:>12.4e} {:>10.2e} {:>12.4e} {:>12.4e}",
            p.label.tag(),
            p.location.norm(),
            p.value,
            p.grad_norm,
            p.min_eig,
            p.max_eig
        );
        let mut row = vec![p.label.tag().to_string(), p.value.to_string(), p.min_eig.to_string(), p.max_eig.to_string()];
        row.extend(p.location.iter().map(|v| v.to_string()));
        rows.push(row);
    }
    println!("{} critical point(s); {} start(s) dropped", scan.points.len(), scan.dropped);
    if let Some(out) = &c.out {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let path = out.join("critical_points.csv");
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(&path)?;
        let mut header = vec!["label".to_string(), "value".into(), "min_eig".into(), "max_eig".into()];
        header.extend((0..d).map(|i| format!("param_{i}")));
        w.write_record(&header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        info!("wrote {}", path.display());
    }
    Ok(())
}

fn recover(c: &Common) -> Result<()> {
    let family = c.family();
    let d = c.dim.unwrap_or(16);
    let m = c.m.unwrap_or(1000);
    let estimators = c.estimators.clone().unwrap_or_else(|| vec![Estimator::Osmmd]);
    let repeats = c.repeats.unwrap_or(1);
    let optimizer = c.optimizer(0.1, 500)?;
    let mut trials = Vec::new();
    for r in 0..repeats {
        let seed = rng::derive_seed(c.seed(), r as u64);
        let truth = harness::random_problem(family, d, c.epsilon.unwrap_or(0.0), rng::derive_seed(seed, u64::MAX))?;
        for est in &estimators {
            let kernel = KernelConfig::new(c.bandwidth.unwrap_or_else(|| family.default_bandwidth(*est)))?;
            let report = harness::recovery_trial(&TrialSpec {
                truth: truth.clone(),
                estimator: *est,
                m,
                n: c.n.unwrap_or(m),
                optimizer,
                kernel,
                init: None,
                seed,
            })?;
            println!(
                "trial {r:>3} {:<6} error {:.5} {} ({:.2}s)",
                est.tag(),
                report.error_metric,
                if report.success { "success" } else { "failure" },
                report.wall_time
            );
            trials.push(report);
        }
    }
    write(Report::Recover(&trials), &c.out_dir())
}

fn sweep(c: &Common) -> Result<()> {
    let axis = match c.axis.as_deref() {
        None | Some("m") => SweepAxis::M,
        Some("epsilon") => SweepAxis::Epsilon,
        Some(other) => bail!("unknown axis '{other}' (expected m or epsilon)"),
    };
    let family = c.family.unwrap_or(if axis == SweepAxis::Epsilon { Family::Cov } else { Family::Mean });
    let cfg = SweepConfig {
        family,
        dim: c.dim.unwrap_or(16),
        axis,
        values: c.values.clone().unwrap_or_else(|| match axis {
            SweepAxis::M => vec![50.0, 100.0, 200.0, 400.0, 800.0],
            SweepAxis::Epsilon => vec![1e-5, 1e-3, 1e-1],
        }),
        estimators: c.estimators.clone().unwrap_or_else(|| vec![Estimator::Osmmd, Estimator::Mle]),
        repeats: c.repeats.unwrap_or(100),
        seed: c.seed(),
        lr: c.lr.unwrap_or(0.1),
        iters: c.iters.unwrap_or(500),
        method: c.method()?,
        m: c.m.unwrap_or(1000),
        n: c.n,
        epsilon: c.epsilon.unwrap_or(0.0),
        bandwidth: c.bandwidth,
        overrides: c.overrides.clone().unwrap_or_default(),
    };
    cfg.validate()?;
    let report = harness::success_sweep(&cfg)?;
    for row in &report.rows {
        println!(
            "{}={:<10} {:<6} {:>4}/{:<4} rate {:.3} ± {:.3}",
            report.axis_name,
            row.axis_value,
            row.estimator.tag(),
            row.successes,
            row.repeats,
            row.rate,
            row.half_width
        );
    }
    write(Report::Sweep(&report), &c.out_dir())
}

fn unmix(c: &Common) -> Result<()> {
    let noise = c.noise_var.clone().unwrap_or_else(|| vec![0.001, 0.01, 0.1]);
    let mut reports = Vec::new();
    for (i, nv) in noise.iter().enumerate() {
        let mut cfg = UnmixingConfig::new(*nv, c.repeats.unwrap_or(50), rng::derive_seed(c.seed(), i as u64));
        cfg.dim = c.dim.unwrap_or(cfg.dim);
        cfg.rank = c.rank.unwrap_or(cfg.rank);
        cfg.points = c.m.unwrap_or(cfg.points);
        cfg.fakes = c.n.unwrap_or(cfg.fakes);
        cfg.epochs = c.iters.unwrap_or(cfg.epochs);
        cfg.lr = c.lr.unwrap_or(cfg.lr);
        cfg.bandwidth = c.bandwidth.unwrap_or(cfg.bandwidth);
        let report = harness::unmixing_experiment(&cfg)?;
        for m in &report.methods {
            println!("noise_var {nv:<8} {:<4} {:.3} ({:.3}) over {} trials", m.method, m.mean_dist, m.std_dist, m.trials);
        }
        reports.push(report);
    }
    write(Report::Unmix(&reports), &c.out_dir())
}

fn write(report: Report<'_>, out: &Path) -> Result<()> {
    for path in emit_outputs(report, out)? {
        info!("wrote {}", path.display());
    }
    Ok(())
}
