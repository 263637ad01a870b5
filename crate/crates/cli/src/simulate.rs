//! `simulate`: metrics, mean curves, balance rates and failure reasons per cell.

use std::io::Write;
use std::path::Path;

use erc_core::metrics::{write_metrics_csv, ScenarioResult};
use erc_core::simulation::{run_cell, TruthTable};
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::{write_atomic, write_json};
use crate::CliError;

#[derive(Debug, Serialize)]
struct FailureSummary<'a> {
    scenario: &'a str,
    estimator: &'a str,
    successes: usize,
    failures: usize,
    reasons: &'a [(String, usize)],
}

pub struct SimulationOutcome {
    pub results: Vec<ScenarioResult>,
    /// Cells where no estimator produced a single curve.
    pub empty_cells: Vec<String>,
}

pub fn run(cfg: &RunConfig) -> Result<SimulationOutcome, CliError> {
    let sim = &cfg.simulation;
    sim.validate()?;
    let cells = cfg.cells()?;
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;

    let grid = sim.grid()?;
    let mut outcomes = Vec::new();
    for c in &cells {
        if !outcomes.contains(&c.outcome) {
            outcomes.push(c.outcome);
        }
    }
    let truth = TruthTable::new(&outcomes, grid.points(), &sim.scenario)?;

    let mut results = Vec::new();
    for cell in &cells {
        let r = run_cell(sim, *cell, &truth)?;
        let ok: usize = r.estimators.iter().map(|m| m.successes).sum();
        eprintln!("{}: {ok} successful fits", r.scenario);
        results.push(r);
    }

    write_outputs(&out, cfg, &results)?;
    let empty_cells = results
        .iter()
        .filter(|r| !r.any_success())
        .map(|r| r.scenario.clone())
        .collect();
    Ok(SimulationOutcome {
        results,
        empty_cells,
    })
}

fn write_outputs(out: &Path, cfg: &RunConfig, results: &[ScenarioResult]) -> Result<(), CliError> {
    write_atomic(&out.join("metrics.csv"), |w| {
        Ok(write_metrics_csv(w, results)?)
    })?;
    write_atomic(&out.join("curves.csv"), |w| write_curves(w, results))?;
    write_atomic(&out.join("balance.csv"), |w| {
        write_balance_rates(w, results)
    })?;
    let failures: Vec<FailureSummary> = results
        .iter()
        .flat_map(|r| {
            r.estimators.iter().map(move |m| FailureSummary {
                scenario: &r.scenario,
                estimator: &m.estimator,
                successes: m.successes,
                failures: m.failures,
                reasons: &m.failure_reasons,
            })
        })
        .collect();
    write_json(&out.join("failures.json"), &failures)?;
    write_json(&out.join("run.json"), cfg)
}

fn write_curves(w: &mut dyn Write, results: &[ScenarioResult]) -> Result<(), CliError> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "scenario",
        "estimator",
        "exposure",
        "truth",
        "mean_estimate",
    ])?;
    for r in results {
        for m in &r.estimators {
            if m.mean_curve.is_empty() {
                continue;
            }
            for (k, e) in r.grid.iter().enumerate() {
                csv.write_record([
                    r.scenario.clone(),
                    m.estimator.clone(),
                    e.to_string(),
                    r.truth[k].to_string(),
                    m.mean_curve[k].to_string(),
                ])?;
            }
        }
    }
    csv.flush()?;
    Ok(())
}

fn write_balance_rates(w: &mut dyn Write, results: &[ScenarioResult]) -> Result<(), CliError> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "scenario",
        "estimator",
        "n",
        "balance_rate",
        "convergence_rate",
        "replicates",
    ])?;
    for r in results {
        for m in r
            .estimators
            .iter()
            .filter(|m| !m.convergence_flags.is_empty())
        {
            let conv = m.convergence_flags.iter().filter(|&&c| c).count() as f64
                / m.convergence_flags.len() as f64;
            csv.write_record([
                r.scenario.clone(),
                m.estimator.clone(),
                r.n.to_string(),
                m.balance_rate().map(|b| b.to_string()).unwrap_or_default(),
                conv.to_string(),
                m.convergence_flags.len().to_string(),
            ])?;
        }
    }
    csv.flush()?;
    Ok(())
}
