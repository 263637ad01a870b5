//! `fit`: the selected estimators on one dataset.

use std::path::Path;

use erc_core::estimators::fit_estimators;
use erc_core::scenario::gen_dataset;
use erc_core::simulation::TruthTable;
use erc_core::ErcError;
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::{write_atomic, write_json};
use crate::CliError;

#[derive(Debug, Serialize)]
struct FitReport {
    source: String,
    n: usize,
    estimators: Vec<FitStatus>,
}

#[derive(Debug, Serialize)]
struct FitStatus {
    estimator: String,
    ok: bool,
    error: Option<String>,
    converged: bool,
    mean_abs_corr: Option<f64>,
}

/// Exposure, outcome and covariate columns from a CSV with an `exposure` and
/// an `outcome` column; every other column is a numeric covariate.
pub fn read_dataset(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>), CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ErcError::MissingColumn(name.into()))
    };
    let (ei, yi) = (find("exposure")?, find("outcome")?);
    let cov_idx: Vec<usize> = (0..headers.len()).filter(|&i| i != ei && i != yi).collect();
    let (mut e, mut y, mut cov) = (Vec::new(), Vec::new(), vec![Vec::new(); cov_idx.len()]);
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64, CliError> {
            let cell = row.get(i).unwrap_or("").trim();
            cell.parse().map_err(|_| {
                ErcError::MalformedRow {
                    line,
                    message: format!("column `{}`: `{cell}` is not a number", &headers[i]),
                }
                .into()
            })
        };
        e.push(num(ei)?);
        y.push(num(yi)?);
        for (col, &i) in cov.iter_mut().zip(&cov_idx) {
            col.push(num(i)?);
        }
    }
    Ok((cov, e, y))
}

pub fn run(cfg: &RunConfig) -> Result<usize, CliError> {
    let sim = &cfg.simulation;
    let grid = sim.grid()?;
    let (source, cov, e, y, truth) = match &cfg.fit.data {
        Some(path) => {
            let (cov, e, y) = read_dataset(path)?;
            (path.display().to_string(), cov, e, y, None)
        }
        None => {
            let cell = cfg.cells()?[0];
            let data = gen_dataset(
                cell.scenario(sim.master_seed, cfg.fit.replicate),
                &sim.scenario,
            )?;
            let truth = TruthTable::new(&[cell.outcome], grid.points(), &sim.scenario)?;
            let t = truth.get(cell.outcome).map(|t| t.values().to_vec());
            (
                format!("{} replicate {}", cell.id(), cfg.fit.replicate),
                data.covariates.columns().to_vec(),
                data.exposure,
                data.outcome,
                t,
            )
        }
    };
    if sim.estimators.is_empty() {
        return Err(CliError::Config("estimator list is empty".into()));
    }
    let fits = fit_estimators(&cov, &e, &y, &sim.estimators, grid.points(), &sim.estimator);
    let out = cfg.out_dir();
    write_atomic(&out.join("fit_curves.csv"), |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["estimator", "exposure", "estimate", "truth"])?;
        for f in &fits {
            let Ok(curve) = &f.curve else { continue };
            for (k, (g, v)) in curve.grid().iter().zip(curve.values()).enumerate() {
                let t = truth.as_ref().map(|t| t[k].to_string()).unwrap_or_default();
                csv.write_record([f.estimator.to_string(), g.to_string(), v.to_string(), t])?;
            }
        }
        csv.flush()?;
        Ok(())
    })?;
    let report = FitReport {
        source,
        n: e.len(),
        estimators: fits
            .iter()
            .map(|f| FitStatus {
                estimator: f.estimator.to_string(),
                ok: f.curve.is_ok(),
                error: f.curve.as_ref().err().map(|e| e.to_string()),
                converged: f.converged,
                mean_abs_corr: f.balance.as_ref().map(|b| b.mean_abs_corr),
            })
            .collect(),
    };
    write_json(&out.join("fit.json"), &report)?;
    Ok(fits.iter().filter(|f| f.curve.is_ok()).count())
}
