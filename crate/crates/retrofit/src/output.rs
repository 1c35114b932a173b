//! Report, trajectory, metrics and plot files.

use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use retrofit_core::Trajectory;
use serde::Serialize;

use crate::error::{AppError, Result};
use crate::pipeline::{Outcome, Run, VariantMetrics};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(AppError::io(path))
}

/// `k, x0..x{n-1}` followed by any auxiliary sequence recorded at every step.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = traj.dim();
    let aux: Vec<(&String, &Vec<_>)> = traj
        .aux
        .iter()
        .filter(|(_, seq)| seq.len() == traj.states.len())
        .collect();
    let mut header = vec![String::from("k")];
    header.extend((0..n).map(|i| format!("x{i}")));
    for (key, seq) in &aux {
        header.extend((0..seq[0].len()).map(|i| format!("{key}{i}")));
    }
    w.write_record(&header)?;
    for (k, x) in traj.states.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(x.iter().map(|v| format!("{v:e}")));
        for (_, seq) in &aux {
            row.extend(seq[k].iter().map(|v| format!("{v:e}")));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(AppError::io(path))
}

/// Writes every artifact of a run into `dir` and returns the paths written.
pub fn write_outcome(dir: &Path, outcome: &Outcome, plot: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(AppError::io(dir))?;
    let mut written = Vec::new();
    let report = dir.join("report.json");
    write_json(&report, &outcome.report)?;
    written.push(report);
    written.extend(write_runs(dir, &outcome.runs, &outcome.metrics, plot)?);
    Ok(written)
}

pub fn write_runs(dir: &Path, runs: &[Run], metrics: &[VariantMetrics], plot: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(AppError::io(dir))?;
    let mut written = Vec::new();
    for run in runs {
        let p = dir.join(format!("trajectory_{}.csv", run.name));
        write_trajectory_csv(&p, &run.trajectory)?;
        written.push(p);
    }
    for m in metrics {
        let p = dir.join(format!("metrics_{}.json", m.variant));
        write_json(&p, m)?;
        written.push(p);
    }
    if plot {
        if !metrics.is_empty() {
            let p = dir.join("plot_errors.svg");
            plot_errors(&p, metrics)?;
            written.push(p);
        }
        for run in runs {
            let p = dir.join(format!("plot_states_{}.svg", run.name));
            plot_states(&p, run)?;
            written.push(p);
        }
    }
    Ok(written)
}

fn plot_err<E: std::fmt::Debug>(e: E) -> AppError {
    AppError::Plot(format!("{e:?}"))
}

/// Error norm against the segment reference, log scale, one line per variant.
pub fn plot_errors(path: &Path, metrics: &[VariantMetrics]) -> Result<()> {
    let series: Vec<(String, Vec<(usize, f64)>)> = metrics
        .iter()
        .map(|m| {
            let mut pts = Vec::new();
            for seg in &m.segments {
                for (i, e) in seg.metrics.errors.iter().enumerate() {
                    let k = seg.start + i;
                    if pts.last().is_some_and(|&(last, _)| last >= k) {
                        continue;
                    }
                    pts.push((k, e.max(1e-300)));
                }
            }
            (m.variant.clone(), pts)
        })
        .collect();
    let kmax = series.iter().flat_map(|(_, p)| p.last().map(|q| q.0)).max().unwrap_or(1).max(1);
    let vals = || series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1));
    let hi = vals().fold(f64::MIN_POSITIVE, f64::max) * 2.0;
    let lo = vals().fold(hi, f64::min).max(hi * 1e-16) / 2.0;

    let root = SVGBackend::new(path, (900, 540)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("error norm", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(64)
        .build_cartesian_2d(0usize..kmax, (lo..hi).log_scale())
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("k")
        .y_desc("||x_k - x*||")
        .draw()
        .map_err(plot_err)?;
    for (i, (name, pts)) in series.into_iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts, color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Every state component against `k`.
pub fn plot_states(path: &Path, run: &Run) -> Result<()> {
    let states = &run.trajectory.states;
    let kmax = states.len().saturating_sub(1).max(1);
    let (mut lo, mut hi) = states
        .iter()
        .flat_map(|x| x.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !(lo.is_finite() && hi.is_finite()) {
        (lo, hi) = (-1.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    let root = SVGBackend::new(path, (900, 540)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("states ({})", run.name), ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(64)
        .build_cartesian_2d(0usize..kmax, (lo - pad)..(hi + pad))
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("k").draw().map_err(plot_err)?;
    for i in 0..run.trajectory.dim() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(
                states.iter().enumerate().map(|(k, x)| (k, x[i])),
                color.stroke_width(1),
            ))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}
