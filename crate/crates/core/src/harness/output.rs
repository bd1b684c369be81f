use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use super::recovery::TrialReport;
use super::sweep::{SweepReport, SweepRow};
use super::unmixing::UnmixingReport;
use super::Estimator;
use crate::error::{Error, Result};

/// Any result set the harness can persist.
#[derive(Debug, Clone, Copy)]
pub enum Report<'a> {
    Sweep(&'a SweepReport),
    Recover(&'a [TrialReport]),
    Unmix(&'a [UnmixingReport]),
}

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
}

struct PlotSpec {
    x_label: String,
    y_label: String,
    series: Vec<Series>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv { path: path.to_path_buf(), source }
}

impl Report<'_> {
    fn header(&self) -> &'static [&'static str] {
        match self {
            Report::Sweep(_) => &["axis_name", "axis_value", "estimator", "repeats", "successes", "rate", "half_width"],
            Report::Recover(_) => &["trial", "estimator", "error_metric", "success", "seconds"],
            Report::Unmix(_) => &["noise_var", "method", "mean_dist", "std_dist", "trials"],
        }
    }

    fn records(&self) -> Vec<Vec<String>> {
        match self {
            Report::Sweep(s) => s
                .rows
                .iter()
                .map(|r| {
                    vec![
                        s.axis_name.clone(),
                        r.axis_value.to_string(),
                        r.estimator.tag().to_string(),
                        r.repeats.to_string(),
                        r.successes.to_string(),
                        r.rate.to_string(),
                        r.half_width.to_string(),
                    ]
                })
                .collect(),
            Report::Recover(trials) => trials
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    vec![
                        i.to_string(),
                        t.estimator.tag().to_string(),
                        t.error_metric.to_string(),
                        t.success.to_string(),
                        t.wall_time.to_string(),
                    ]
                })
                .collect(),
            Report::Unmix(reports) => reports
                .iter()
                .flat_map(|r| {
                    r.methods.iter().map(move |m| {
                        vec![
                            r.noise_var.to_string(),
                            m.method.clone(),
                            m.mean_dist.to_string(),
                            m.std_dist.to_string(),
                            m.trials.to_string(),
                        ]
                    })
                })
                .collect(),
        }
    }

    fn plot(&self) -> PlotSpec {
        let mut series: Vec<Series> = Vec::new();
        let mut push = |name: &str, point: (f64, f64)| match series.iter_mut().find(|s| s.name == name) {
            Some(s) => s.points.push(point),
            None => series.push(Series { name: name.to_string(), points: vec![point] }),
        };
        match self {
            Report::Sweep(s) => {
                for r in &s.rows {
                    push(r.estimator.tag(), (r.axis_value, r.rate));
                }
                PlotSpec { x_label: s.axis_name.clone(), y_label: "success rate".into(), series }
            }
            Report::Recover(trials) => {
                for (i, t) in trials.iter().enumerate() {
                    push(t.estimator.tag(), (i as f64, t.error_metric));
                }
                PlotSpec { x_label: "trial".into(), y_label: "error metric".into(), series }
            }
            Report::Unmix(reports) => {
                for r in reports.iter() {
                    for m in &r.methods {
                        push(&m.method, (r.noise_var, m.mean_dist));
                    }
                }
                PlotSpec { x_label: "noise_var".into(), y_label: "mean permutation distance".into(), series }
            }
        }
    }
}

/// Writes `results.csv` and `plot.svg` into `out_dir`, overwriting both.
/// Returns the paths written.
pub fn emit_outputs(report: Report<'_>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let csv_path = out_dir.join("results.csv");
    {
        let file = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file);
        w.write_record(report.header()).map_err(csv_err(&csv_path))?;
        for rec in report.records() {
            w.write_record(&rec).map_err(csv_err(&csv_path))?;
        }
        w.flush().map_err(io_err(&csv_path))?;
    }
    let plot_path = out_dir.join("plot.svg");
    let spec = report.plot();
    if spec.series.iter().all(|s| s.points.is_empty()) {
        warn!("no data to plot; writing empty axes to {}", plot_path.display());
    }
    fs::write(&plot_path, render_svg(&spec)).map_err(io_err(&plot_path))?;
    Ok(vec![csv_path, plot_path])
}

/// Parses a sweep `results.csv` back into rows.
pub fn read_sweep_csv(path: &Path) -> Result<(String, Vec<SweepRow>)> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut axis_name = String::new();
    let mut rows = Vec::new();
    let bad = |what: &str| Error::InvalidArgument(format!("{}: malformed {what}", path.display()));
    for rec in reader.records() {
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() != 7 {
            return Err(bad("row"));
        }
        axis_name = rec[0].to_string();
        rows.push(SweepRow {
            axis_value: rec[1].parse().map_err(|_| bad("axis_value"))?,
            estimator: rec[2].parse::<Estimator>()?,
            repeats: rec[3].parse().map_err(|_| bad("repeats"))?,
            successes: rec[4].parse().map_err(|_| bad("successes"))?,
            rate: rec[5].parse().map_err(|_| bad("rate"))?,
            half_width: rec[6].parse().map_err(|_| bad("half_width"))?,
        });
    }
    Ok((axis_name, rows))
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 70.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render_svg(spec: &PlotSpec) -> String {
    let finite: Vec<(f64, f64)> = spec
        .series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (mut x_min, mut x_max) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let (mut y_min, mut y_max) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    if finite.is_empty() {
        (x_min, x_max, y_min, y_max) = (0.0, 1.0, 0.0, 1.0);
    }
    let log_x = x_min > 0.0 && x_max / x_min >= 100.0;
    let tx = |x: f64| if log_x { x.log10() } else { x };
    let (mut lo, mut hi) = (tx(x_min), tx(x_max));
    if hi - lo <= 0.0 {
        lo -= 0.5;
        hi += 0.5;
    }
    if spec.y_label == "success rate" {
        y_min = 0.0;
        y_max = y_max.max(1.0);
    }
    if y_max - y_min <= 0.0 {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let px = |x: f64| MARGIN_L + (tx(x) - lo) / (hi - lo) * plot_w;
    let py = |y: f64| MARGIN_T + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h;

    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (x0, y0, x1, y1) = (MARGIN_L, MARGIN_T + plot_h, MARGIN_L + plot_w, MARGIN_T);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);

    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let xv = if log_x { 10f64.powf(lo + f * (hi - lo)) } else { lo + f * (hi - lo) };
        let yv = y_min + f * (y_max - y_min);
        let (gx, gy) = (px(xv), py(yv));
        let _ = writeln!(out, r#"<line x1="{gx:.2}" y1="{y0}" x2="{gx:.2}" y2="{:.2}" stroke="black"/>"#, y0 + 5.0);
        let _ = writeln!(
            out,
            r#"<text x="{gx:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
            y0 + 20.0,
            tick_label(xv)
        );
        let _ = writeln!(out, r#"<line x1="{:.2}" y1="{gy:.2}" x2="{x0}" y2="{gy:.2}" stroke="black"/>"#, x0 - 5.0);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="end">{}</text>"#,
            x0 - 8.0,
            gy + 4.0,
            tick_label(yv)
        );
    }
    let x_caption = if log_x { format!("{} (log scale)", spec.x_label) } else { spec.x_label.clone() };
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">{}</text>"#,
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 20.0,
        escape(&x_caption)
    );
    let _ = writeln!(
        out,
        r#"<text x="20" y="{:.2}" font-size="14" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        escape(&spec.y_label)
    );

    for (i, s) in spec.series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_x || *x > 0.0))
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        }
        let ly = MARGIN_T + 20.0 + 20.0 * i as f64;
        let lx = WIDTH - MARGIN_R + 15.0;
        let _ = writeln!(out, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 25.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="12">{}</text>"#, lx + 30.0, ly + 4.0, escape(&s.name));
    }
    out.push_str("</svg>\n");
    out
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{}", (v * 1000.0).round() / 1000.0)
    }
}
