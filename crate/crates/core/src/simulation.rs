//! Scenario grid runner: replicates, estimator fits and per-cell metrics.
//!
//! Replicate `r` of cell `(exposure, outcome, n)` is seeded with
//! `derive_seed(master, [exposure index, outcome index, n, r])`, where the
//! indices refer to the canonical orderings in `ExposureModelKind::ALL` and
//! `OutcomeModelKind::ALL`. Any subset of the grid therefore regenerates the
//! same replicates as the full run.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::erc::ErcEstimate;
use crate::error::{ErcError, Result};
use crate::estimators::{fit_estimators, one_hot_column, EstimatorConfig, EstimatorKind};
use crate::metrics::{abs_bias, mean_curve, rmse, EstimatorMetrics, MetricGrid, ScenarioResult};
use crate::scenario::{
    gen_dataset, reference_covariates, true_erc, ExposureModelKind, OutcomeModelKind, Scenario, ScenarioOptions,
};
use crate::seed::derive_seed;

pub const DEFAULT_SAMPLE_SIZES: [usize; 3] = [200, 1000, 10_000];
pub const DEFAULT_REPLICATES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub exposures: Vec<ExposureModelKind>,
    pub outcomes: Vec<OutcomeModelKind>,
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    pub estimators: Vec<EstimatorKind>,
    pub master_seed: u64,
    pub grid_points: usize,
    /// Expand `C5` into indicator columns for every estimator's design.
    pub one_hot_c5: bool,
    pub scenario: ScenarioOptions,
    pub estimator: EstimatorConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            exposures: ExposureModelKind::ALL.to_vec(),
            outcomes: OutcomeModelKind::ALL.to_vec(),
            sample_sizes: DEFAULT_SAMPLE_SIZES.to_vec(),
            replicates: DEFAULT_REPLICATES,
            estimators: EstimatorKind::ALL.to_vec(),
            master_seed: 20_240_501,
            grid_points: crate::metrics::DEFAULT_GRID_POINTS,
            one_hot_c5: false,
            scenario: ScenarioOptions::default(),
            estimator: EstimatorConfig::default(),
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.estimators.is_empty() {
            return Err(ErcError::InvalidArgument("estimator list is empty".into()));
        }
        if self.exposures.is_empty() || self.outcomes.is_empty() || self.sample_sizes.is_empty() {
            return Err(ErcError::InvalidArgument("scenario selection is empty".into()));
        }
        if self.replicates == 0 {
            return Err(ErcError::InvalidArgument("need at least one replicate".into()));
        }
        if let Some(&n) = self.sample_sizes.iter().find(|&&n| n < 50) {
            return Err(ErcError::InvalidSampleSize(n));
        }
        self.estimator.matching.validate()?;
        MetricGrid::new(0.0, 20.0, self.grid_points)?;
        Ok(())
    }

    pub fn grid(&self) -> Result<MetricGrid> {
        MetricGrid::new(0.0, 20.0, self.grid_points)
    }

    /// Cells in exposure-major, then outcome, then sample-size order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &exposure in &self.exposures {
            for &outcome in &self.outcomes {
                for &n in &self.sample_sizes {
                    out.push(Cell { exposure, outcome, n });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub exposure: ExposureModelKind,
    pub outcome: OutcomeModelKind,
    pub n: usize,
}

impl Cell {
    pub fn id(&self) -> String {
        format!("{}/{}/{}", self.exposure, self.outcome, self.n)
    }

    pub fn parse(id: &str) -> Result<Self> {
        let parts: Vec<&str> = id.split('/').collect();
        let [e, o, n] = parts[..] else {
            return Err(ErcError::InvalidArgument(format!("scenario `{id}` is not exposure/outcome/n")));
        };
        Ok(Cell {
            exposure: e.parse()?,
            outcome: o.parse()?,
            n: n.parse().map_err(|_| ErcError::InvalidArgument(format!("bad sample size in `{id}`")))?,
        })
    }

    pub fn replicate_seed(&self, master: u64, replicate: usize) -> u64 {
        let ei = ExposureModelKind::ALL.iter().position(|&k| k == self.exposure).unwrap_or(0);
        let oi = OutcomeModelKind::ALL.iter().position(|&k| k == self.outcome).unwrap_or(0);
        derive_seed(master, &[ei as u64, oi as u64, self.n as u64, replicate as u64])
    }

    pub fn scenario(&self, master: u64, replicate: usize) -> Scenario {
        Scenario { exposure: self.exposure, outcome: self.outcome, n: self.n, seed: self.replicate_seed(master, replicate) }
    }
}

/// True curves on the metric grid, one per outcome kind.
#[derive(Debug, Clone)]
pub struct TruthTable {
    curves: BTreeMap<OutcomeModelKind, ErcEstimate>,
}

impl TruthTable {
    pub fn new(outcomes: &[OutcomeModelKind], grid: &[f64], options: &ScenarioOptions) -> Result<Self> {
        let reference = reference_covariates(options);
        let mut curves = BTreeMap::new();
        for &o in outcomes {
            curves.insert(o, true_erc(o, grid, &reference, options.threshold_form)?);
        }
        Ok(Self { curves })
    }

    pub fn get(&self, outcome: OutcomeModelKind) -> Option<&ErcEstimate> {
        self.curves.get(&outcome)
    }
}

/// Estimator curves (or failure messages) and design diagnostics for one replicate.
#[derive(Debug, Clone)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub fits: Vec<ReplicateFit>,
}

#[derive(Debug, Clone)]
pub struct ReplicateFit {
    pub estimator: EstimatorKind,
    pub curve: std::result::Result<Vec<f64>, String>,
    pub mean_abs_corr: Option<f64>,
    pub converged: bool,
}

pub fn run_replicate(config: &SimulationConfig, cell: Cell, replicate: usize, grid: &[f64]) -> ReplicateRecord {
    let scenario = cell.scenario(config.master_seed, replicate);
    let data = match gen_dataset(scenario, &config.scenario) {
        Ok(d) => d,
        Err(e) => {
            let msg = format!("data generation: {e}");
            let fits = config
                .estimators
                .iter()
                .map(|&k| ReplicateFit { estimator: k, curve: Err(msg.clone()), mean_abs_corr: None, converged: false })
                .collect();
            return ReplicateRecord { replicate, fits };
        }
    };
    let columns = if config.one_hot_c5 {
        one_hot_column(data.covariates.columns(), 4, config.scenario.c5_support.values())
    } else {
        data.covariates.columns().to_vec()
    };
    let fits = fit_estimators(&columns, &data.exposure, &data.outcome, &config.estimators, grid, &config.estimator)
        .into_iter()
        .map(|f| ReplicateFit {
            estimator: f.estimator,
            curve: f.curve.map(|c| c.values().to_vec()).map_err(|e| e.to_string()),
            mean_abs_corr: f.balance.map(|b| b.mean_abs_corr),
            converged: f.converged,
        })
        .collect();
    ReplicateRecord { replicate, fits }
}

/// Aggregates replicate records into per-estimator metrics. Failed
/// replicates are excluded from the averages and counted.
pub fn summarize_cell(
    cell: Cell,
    estimators: &[EstimatorKind],
    records: &[ReplicateRecord],
    grid: &[f64],
    truth: &[f64],
) -> ScenarioResult {
    let metrics = estimators
        .iter()
        .map(|&kind| {
            let mut curves = Vec::new();
            let mut balance_flags = Vec::new();
            let mut convergence_flags = Vec::new();
            let mut reasons: BTreeMap<String, usize> = BTreeMap::new();
            for rec in records {
                let Some(fit) = rec.fits.iter().find(|f| f.estimator == kind) else { continue };
                match &fit.curve {
                    Ok(c) => curves.push(c.clone()),
                    Err(msg) => *reasons.entry(msg.clone()).or_default() += 1,
                }
                if kind.is_design_based() {
                    if let Some(corr) = fit.mean_abs_corr {
                        balance_flags.push(corr < crate::balance::BALANCE_THRESHOLD);
                    }
                    convergence_flags.push(fit.converged);
                }
            }
            let failures = reasons.values().sum();
            EstimatorMetrics {
                estimator: kind.name().to_string(),
                abs_bias: abs_bias(&curves, truth).ok(),
                rmse: rmse(&curves, truth).ok(),
                balance_flags,
                convergence_flags,
                successes: curves.len(),
                failures,
                failure_reasons: reasons.into_iter().collect(),
                mean_curve: mean_curve(&curves),
            }
        })
        .collect();
    ScenarioResult {
        scenario: cell.id(),
        n: cell.n,
        replicates: records.len(),
        grid: grid.to_vec(),
        truth: truth.to_vec(),
        estimators: metrics,
    }
}

pub fn run_cell(config: &SimulationConfig, cell: Cell, truth: &TruthTable) -> Result<ScenarioResult> {
    let grid = config.grid()?;
    let truth = truth
        .get(cell.outcome)
        .ok_or_else(|| ErcError::InvalidArgument(format!("no truth for outcome `{}`", cell.outcome)))?;
    let records: Vec<ReplicateRecord> = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replicate(config, cell, r, grid.points()))
        .collect();
    Ok(summarize_cell(cell, &config.estimators, &records, grid.points(), truth.values()))
}

/// Runs every selected cell in order; `on_cell` sees each result as it completes.
pub fn run_simulation_grid(
    config: &SimulationConfig,
    mut on_cell: impl FnMut(&ScenarioResult),
) -> Result<Vec<ScenarioResult>> {
    config.validate()?;
    let grid = config.grid()?;
    let truth = TruthTable::new(&config.outcomes, grid.points(), &config.scenario)?;
    let mut out = Vec::new();
    for cell in config.cells() {
        let result = run_cell(config, cell, &truth)?;
        on_cell(&result);
        out.push(result);
    }
    Ok(out)
}
