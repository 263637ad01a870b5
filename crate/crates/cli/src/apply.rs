//! `apply`: every estimator on an aggregated rate file, with bootstrap bands
//! and relative-rate curves.

use std::path::Path;

use erc_core::application::{
    application_grid, fit_application, ingest, m_of_n_block_bootstrap, prepare_outcome,
    relative_rate_curve, trim_exposure, AppBalance, MIN_BOOTSTRAP_BLOCKS,
};
use erc_core::estimators::EstimatorKind;
use erc_core::ErcEstimate;
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::{write_atomic, write_json};
use crate::CliError;

#[derive(Debug, Serialize)]
pub struct EstimatorReport {
    pub estimator: EstimatorKind,
    pub status: &'static str,
    pub error: Option<String>,
    pub bootstrap: Option<BootstrapReport>,
    pub balance: Option<AppBalance>,
}

#[derive(Debug, Serialize)]
pub struct BootstrapReport {
    pub replicates: usize,
    pub failures: usize,
    pub unreliable: bool,
    pub m: usize,
    pub n_blocks: usize,
    pub failure_reasons: Vec<(String, usize)>,
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct Diagnostics {
    pub data: String,
    pub records_in: usize,
    pub records_kept: usize,
    pub blocks: usize,
    pub retained_range: (f64, f64),
    pub reference: f64,
    pub zero_rate_replacement: Option<f64>,
    pub estimators: Vec<EstimatorReport>,
}

pub fn run(cfg: &RunConfig) -> Result<Diagnostics, CliError> {
    let app = &cfg.application;
    let settings = &app.settings;
    settings.validate()?;
    if app.estimators.is_empty() {
        return Err(CliError::Config("estimator list is empty".into()));
    }
    let data = app
        .data
        .as_ref()
        .ok_or_else(|| CliError::Config("no application data file given".into()))?;
    let file = std::fs::File::open(data).map_err(|e| CliError::io(data, e))?;
    let records = ingest(file)?;
    let (kept, range) = trim_exposure(&records, settings.trim)?;
    settings.check_reference(range)?;
    let grid = application_grid(range, settings.grid_levels);
    let table = prepare_outcome(&kept)?;
    let blocks = kept.blocks().len();

    let out = cfg.out_dir();
    let mut reports = Vec::new();
    for &kind in &app.estimators {
        let point = fit_application(&table, kind, &grid, &settings.estimator);
        let fit = match point {
            Ok(f) => f,
            Err(e) => {
                eprintln!("{kind}: failed ({e})");
                reports.push(EstimatorReport {
                    estimator: kind,
                    status: "failed",
                    error: Some(e.to_string()),
                    bootstrap: None,
                    balance: None,
                });
                continue;
            }
        };
        let mut estimate = fit.estimate.clone();
        let mut relative = relative_rate_curve(&estimate, settings.reference)?;
        let bootstrap = (settings.bootstrap_replicates > 0).then(|| {
            if blocks < MIN_BOOTSTRAP_BLOCKS {
                return BootstrapReport {
                    replicates: 0,
                    failures: 0,
                    unreliable: true,
                    m: 0,
                    n_blocks: blocks,
                    failure_reasons: vec![],
                    error: Some(format!(
                        "{blocks} blocks; the bootstrap needs {MIN_BOOTSTRAP_BLOCKS}"
                    )),
                };
            }
            match m_of_n_block_bootstrap(&kept, kind, &grid, settings) {
                Ok(b) => {
                    estimate = b.estimate;
                    relative = b.relative;
                    BootstrapReport {
                        replicates: b.replicates,
                        failures: b.failures,
                        unreliable: b.unreliable,
                        m: b.m,
                        n_blocks: b.n_blocks,
                        failure_reasons: b.failure_reasons,
                        error: None,
                    }
                }
                Err(e) => BootstrapReport {
                    replicates: settings.bootstrap_replicates,
                    failures: settings.bootstrap_replicates,
                    unreliable: true,
                    m: 0,
                    n_blocks: blocks,
                    failure_reasons: vec![],
                    error: Some(e.to_string()),
                },
            }
        });
        write_curve(&out.join("curves").join(format!("{kind}.csv")), &estimate)?;
        write_curve(&out.join("relative").join(format!("{kind}.csv")), &relative)?;
        eprintln!("{kind}: fitted");
        reports.push(EstimatorReport {
            estimator: kind,
            status: "ok",
            error: None,
            bootstrap,
            balance: fit.balance,
        });
    }

    write_atomic(&out.join("balance_application.csv"), |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["estimator", "covariate", "unadjusted", "adjusted"])?;
        for r in &reports {
            let Some(b) = &r.balance else { continue };
            for (j, c) in b.covariates.iter().enumerate() {
                csv.write_record([
                    r.estimator.to_string(),
                    c.clone(),
                    b.unadjusted.abs_corr[j].to_string(),
                    b.adjusted.abs_corr[j].to_string(),
                ])?;
            }
        }
        csv.flush()?;
        Ok(())
    })?;
    let diagnostics = Diagnostics {
        data: data.display().to_string(),
        records_in: records.len(),
        records_kept: kept.len(),
        blocks,
        retained_range: range,
        reference: settings.reference,
        zero_rate_replacement: table.zero_replacement,
        estimators: reports,
    };
    write_json(&out.join("diagnostics.json"), &diagnostics)?;
    Ok(diagnostics)
}

fn write_curve(path: &Path, erc: &ErcEstimate) -> Result<(), CliError> {
    write_atomic(path, |w| Ok(erc.write_csv(w)?))
}
