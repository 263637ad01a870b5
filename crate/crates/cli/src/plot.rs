//! SVG figures rebuilt from the CSV outputs alone.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use erc_core::metrics::{read_metrics_csv, MetricsRow};
use erc_core::ErcEstimate;
use plotters::prelude::*;
use serde::Deserialize;

use crate::CliError;

pub const BALANCE_LINE: f64 = 0.1;
const PANEL: (u32, u32) = (900, 280);

fn draw_err<E: std::fmt::Debug>(e: E) -> CliError {
    CliError::Plot(format!("{e:?}"))
}

/// Renders every figure whose inputs are present in `dir` into `out`.
pub fn emit_plots(dir: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut written = Vec::new();
    let metrics = dir.join("metrics.csv");
    if metrics.exists() {
        let file = std::fs::File::open(&metrics).map_err(|e| CliError::io(&metrics, e))?;
        let rows = read_metrics_csv(file)?;
        if rows.is_empty() {
            return Err(CliError::Plot(format!("{} has no rows", metrics.display())));
        }
        let path = out.join("bias_rmse.svg");
        bias_rmse(&rows, &path)?;
        written.push(path);
    }
    for (sub, name, title) in [
        ("curves", "erc_curves.svg", "Mortality rate"),
        ("relative", "relative_curves.svg", "Relative rate"),
    ] {
        let curves = read_curve_dir(&dir.join(sub))?;
        if !curves.is_empty() {
            let path = out.join(name);
            erc_curves(&curves, title, &path)?;
            written.push(path);
        }
    }
    let balance = dir.join("balance_application.csv");
    if balance.exists() {
        let rows = read_balance(&balance)?;
        if !rows.is_empty() {
            let path = out.join("balance.svg");
            balance_dots(&rows, &path)?;
            written.push(path);
        }
    }
    if written.is_empty() {
        return Err(CliError::Plot(format!(
            "no result files found in {}",
            dir.display()
        )));
    }
    Ok(written)
}

fn read_curve_dir(dir: &Path) -> Result<Vec<(String, ErcEstimate)>, CliError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("")
                .to_string();
            let file = std::fs::File::open(&p).map_err(|e| CliError::io(&p, e))?;
            Ok((name, ErcEstimate::read_csv(file)?))
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct BalanceRow {
    estimator: String,
    covariate: String,
    unadjusted: f64,
    adjusted: f64,
}

fn read_balance(path: &Path) -> Result<Vec<BalanceRow>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .map(|r| r.map_err(CliError::from))
        .collect()
}

fn short(name: &str) -> String {
    name.replace("change-point", "cp")
        .replace("-entropy", "+ent")
}

/// One panel per scenario cell, grouped by outcome model.
pub fn bias_rmse(rows: &[MetricsRow], path: &Path) -> Result<(), CliError> {
    let mut cells: BTreeMap<(String, String, usize), Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        let mut parts = r.scenario.split('/');
        let exposure = parts.next().unwrap_or("").to_string();
        let outcome = parts.next().unwrap_or("").to_string();
        cells.entry((outcome, exposure, r.n)).or_default().push(r);
    }
    let height = PANEL.1 * cells.len() as u32;
    let root = SVGBackend::new(path, (PANEL.0, height)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let panels = root.split_evenly((cells.len(), 1));
    for (area, ((outcome, exposure, n), rows)) in panels.iter().zip(&cells) {
        let top = rows
            .iter()
            .flat_map(|r| [r.abs_bias, r.rmse])
            .flatten()
            .fold(0.0f64, f64::max)
            .max(1e-9)
            * 1.1;
        let k = rows.len();
        let names: Vec<String> = rows.iter().map(|r| short(&r.estimator)).collect();
        let mut chart = ChartBuilder::on(area)
            .caption(
                format!("outcome {outcome} | exposure {exposure} | n = {n}"),
                ("sans-serif", 16),
            )
            .margin(8)
            .x_label_area_size(28)
            .y_label_area_size(50)
            .build_cartesian_2d(-0.5f64..(k as f64 - 0.5), 0.0..top)
            .map_err(draw_err)?;
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(k)
            .x_label_formatter(&|x| {
                let i = x.round();
                if (x - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < names.len() {
                    names[i as usize].clone()
                } else {
                    String::new()
                }
            })
            .draw()
            .map_err(draw_err)?;
        for (series, (offset, color, label)) in [(-0.35, BLUE, "abs bias"), (0.0, RED, "RMSE")]
            .into_iter()
            .enumerate()
        {
            let bars = rows.iter().enumerate().filter_map(|(i, r)| {
                let v = if series == 0 { r.abs_bias } else { r.rmse }?;
                let x0 = i as f64 + offset;
                Some(Rectangle::new(
                    [(x0, 0.0), (x0 + 0.35, v)],
                    color.mix(0.7).filled(),
                ))
            });
            chart
                .draw_series(bars)
                .map_err(draw_err)?
                .label(label)
                .legend(move |(x, y)| {
                    Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled())
                });
        }
        chart
            .configure_series_labels()
            .border_style(BLACK)
            .background_style(WHITE)
            .draw()
            .map_err(draw_err)?;
    }
    root.present().map_err(draw_err)
}

pub fn erc_curves(
    curves: &[(String, ErcEstimate)],
    title: &str,
    path: &Path,
) -> Result<(), CliError> {
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for (_, c) in curves {
        x0 = x0.min(c.grid()[0]);
        x1 = x1.max(c.grid()[c.len() - 1]);
        for s in [Some(c.values()), c.lower(), c.upper()]
            .into_iter()
            .flatten()
        {
            for &v in s {
                y0 = y0.min(v);
                y1 = y1.max(v);
            }
        }
    }
    let pad = ((y1 - y0) * 0.05).max(1e-9);
    let root = SVGBackend::new(path, (900, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("exposure")
        .y_desc(title)
        .draw()
        .map_err(draw_err)?;
    for (i, (name, c)) in curves.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        if let (Some(lo), Some(hi)) = (c.lower(), c.upper()) {
            let mut poly: Vec<(f64, f64)> =
                c.grid().iter().copied().zip(hi.iter().copied()).collect();
            poly.extend(c.grid().iter().copied().zip(lo.iter().copied()).rev());
            chart
                .draw_series(std::iter::once(Polygon::new(poly, color.mix(0.15))))
                .map_err(draw_err)?;
        }
        chart
            .draw_series(LineSeries::new(
                c.grid().iter().copied().zip(c.values().iter().copied()),
                color.stroke_width(2),
            ))
            .map_err(draw_err)?
            .label(name.clone())
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 14, y)], color.stroke_width(2))
            });
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::UpperLeft)
        .border_style(BLACK)
        .background_style(WHITE)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)
}

fn balance_dots(rows: &[BalanceRow], path: &Path) -> Result<(), CliError> {
    let labels: Vec<String> = rows
        .iter()
        .map(|r| format!("{} {}", short(&r.estimator), r.covariate))
        .collect();
    let top = rows
        .iter()
        .flat_map(|r| [r.unadjusted, r.adjusted])
        .fold(BALANCE_LINE, f64::max)
        * 1.1;
    let k = rows.len();
    let root = SVGBackend::new(path, (800, 120 + 24 * k as u32)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Absolute correlation with exposure", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(180)
        .build_cartesian_2d(0.0..top, -0.5f64..(k as f64 - 0.5))
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .y_labels(k)
        .y_label_formatter(&|y| {
            let i = y.round();
            if (y - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < labels.len() {
                labels[i as usize].clone()
            } else {
                String::new()
            }
        })
        .x_desc("|corr|")
        .draw()
        .map_err(draw_err)?;
    chart
        .draw_series(LineSeries::new(
            [(BALANCE_LINE, -0.5), (BALANCE_LINE, k as f64 - 0.5)],
            BLACK.stroke_width(2),
        ))
        .map_err(draw_err)?
        .label("|corr| = 0.1")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 14, y)], BLACK.stroke_width(2)));
    chart
        .draw_series(
            rows.iter()
                .enumerate()
                .map(|(i, r)| Circle::new((r.unadjusted, i as f64), 5, RED.stroke_width(2))),
        )
        .map_err(draw_err)?
        .label("unadjusted")
        .legend(|(x, y)| Circle::new((x + 7, y), 5, RED.stroke_width(2)));
    chart
        .draw_series(
            rows.iter()
                .enumerate()
                .map(|(i, r)| Circle::new((r.adjusted, i as f64), 5, BLUE.filled())),
        )
        .map_err(draw_err)?
        .label("adjusted")
        .legend(|(x, y)| Circle::new((x + 7, y), 5, BLUE.filled()));
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)
}
