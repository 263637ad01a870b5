//! Absolute bias and RMSE over replicate curves, and balance-achievement rates.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::erc::linspace;
use crate::error::{ErcError, Result};

/// Restricted support on which simulated curves are scored.
pub const RESTRICTED_SUPPORT: (f64, f64) = (0.0, 20.0);
pub const DEFAULT_GRID_POINTS: usize = 100;

/// Equally spaced evaluation points; both endpoints included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricGrid {
    points: Vec<f64>,
}

impl MetricGrid {
    pub fn new(lo: f64, hi: f64, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(ErcError::EmptyGrid);
        }
        let (slo, shi) = RESTRICTED_SUPPORT;
        if !(lo >= slo && hi <= shi && hi > lo) {
            return Err(ErcError::InvalidArgument(format!(
                "metric grid [{lo}, {hi}] must be an interval inside [{slo}, {shi}]"
            )));
        }
        Ok(Self { points: linspace(lo, hi, m) })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl Default for MetricGrid {
    fn default() -> Self {
        Self { points: linspace(RESTRICTED_SUPPORT.0, RESTRICTED_SUPPORT.1, DEFAULT_GRID_POINTS) }
    }
}

fn check(estimates: &[Vec<f64>], truth: &[f64]) -> Result<()> {
    if estimates.is_empty() {
        return Err(ErcError::InvalidSampleSize(0));
    }
    if truth.is_empty() {
        return Err(ErcError::EmptyGrid);
    }
    if estimates.iter().any(|r| r.len() != truth.len()) {
        return Err(ErcError::DimensionMismatch("every replicate curve must match the truth grid".into()));
    }
    Ok(())
}

/// `M^-1 sum_m | S^-1 sum_s (R_s(e_m) - R(e_m)) |`.
pub fn abs_bias(estimates: &[Vec<f64>], truth: &[f64]) -> Result<f64> {
    check(estimates, truth)?;
    let s = estimates.len() as f64;
    let total: f64 = truth
        .iter()
        .enumerate()
        .map(|(m, r)| (estimates.iter().map(|row| row[m] - r).sum::<f64>() / s).abs())
        .sum();
    Ok(total / truth.len() as f64)
}

/// `M^-1 sum_m ( S^-1 sum_s (R_s(e_m) - R(e_m))^2 )^(1/2)`.
pub fn rmse(estimates: &[Vec<f64>], truth: &[f64]) -> Result<f64> {
    check(estimates, truth)?;
    let s = estimates.len() as f64;
    let total: f64 = truth
        .iter()
        .enumerate()
        .map(|(m, r)| (estimates.iter().map(|row| (row[m] - r).powi(2)).sum::<f64>() / s).sqrt())
        .sum();
    Ok(total / truth.len() as f64)
}

/// Fraction of `true` flags.
pub fn balance_rate(flags: &[bool]) -> Result<f64> {
    if flags.is_empty() {
        return Err(ErcError::InvalidSampleSize(0));
    }
    Ok(flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64)
}

/// Pointwise mean of replicate curves.
pub fn mean_curve(estimates: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = estimates.first() else { return Vec::new() };
    let s = estimates.len() as f64;
    (0..first.len()).map(|m| estimates.iter().map(|r| r[m]).sum::<f64>() / s).collect()
}

/// Metrics for one estimator in one scenario cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorMetrics {
    pub estimator: String,
    /// `None` when every replicate failed.
    pub abs_bias: Option<f64>,
    pub rmse: Option<f64>,
    /// Per-replicate balance flags, for design-based estimators.
    pub balance_flags: Vec<bool>,
    /// Per-replicate design-stage convergence, for design-based estimators.
    pub convergence_flags: Vec<bool>,
    pub successes: usize,
    pub failures: usize,
    /// Failure messages with their counts.
    pub failure_reasons: Vec<(String, usize)>,
    pub mean_curve: Vec<f64>,
}

impl EstimatorMetrics {
    pub fn balance_rate(&self) -> Option<f64> {
        balance_rate(&self.balance_flags).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    /// `exposure/outcome/n`.
    pub scenario: String,
    pub n: usize,
    pub replicates: usize,
    pub grid: Vec<f64>,
    pub truth: Vec<f64>,
    pub estimators: Vec<EstimatorMetrics>,
}

impl ScenarioResult {
    pub fn get(&self, estimator: &str) -> Option<&EstimatorMetrics> {
        self.estimators.iter().find(|m| m.estimator == estimator)
    }

    /// True when at least one estimator fit at least one replicate.
    pub fn any_success(&self) -> bool {
        self.estimators.iter().any(|m| m.successes > 0)
    }
}

pub const METRICS_HEADER: [&str; 7] = ["scenario", "estimator", "n", "abs_bias", "rmse", "balance_rate", "failures"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per (scenario, estimator); empty cells for undefined values.
pub fn write_metrics_csv<W: Write>(writer: W, results: &[ScenarioResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRICS_HEADER)?;
    for r in results {
        for m in &r.estimators {
            w.write_record([
                r.scenario.clone(),
                m.estimator.clone(),
                r.n.to_string(),
                opt(m.abs_bias),
                opt(m.rmse),
                opt(m.balance_rate()),
                m.failures.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parsed metrics row, as read back by plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub estimator: String,
    pub n: usize,
    pub abs_bias: Option<f64>,
    pub rmse: Option<f64>,
    pub balance_rate: Option<f64>,
    pub failures: usize,
}

pub fn read_metrics_csv<R: std::io::Read>(reader: R) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    for col in METRICS_HEADER {
        if !headers.iter().any(|h| h == col) {
            return Err(ErcError::MissingColumn(col.into()));
        }
    }
    rdr.deserialize().map(|r| r.map_err(ErcError::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn order_of_operations() {
        let truth = [1.0, 2.0, 3.0];
        let est = vec![vec![4.0, 5.0, 6.0], vec![-2.0, -1.0, 0.0]];
        assert_abs_diff_eq!(abs_bias(&est, &truth).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rmse(&est, &truth).unwrap(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn trivial_cases() {
        let truth = [0.5, -1.0];
        let same = vec![truth.to_vec(); 3];
        assert_eq!(abs_bias(&same, &truth).unwrap(), 0.0);
        assert_eq!(rmse(&same, &truth).unwrap(), 0.0);
        let shifted = vec![vec![2.5, 1.0]; 4];
        assert_abs_diff_eq!(abs_bias(&shifted, &truth).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rmse(&[vec![5.0]], &[0.0]).unwrap(), 5.0, epsilon = 1e-12);
        assert!(abs_bias(&[], &truth).is_err());
        assert!(rmse(&[vec![]], &[]).is_err());
    }

    #[test]
    fn rates() {
        assert_eq!(balance_rate(&[true; 5]).unwrap(), 1.0);
        assert_eq!(balance_rate(&[true, false, true, true]).unwrap(), 0.75);
        assert!(balance_rate(&[]).is_err());
    }

    #[test]
    fn default_grid_spans_restricted_support() {
        let g = MetricGrid::default();
        assert_eq!(g.len(), 100);
        assert_eq!(g.points()[0], 0.0);
        assert_eq!(g.points()[99], 20.0);
        assert!(MetricGrid::new(-1.0, 20.0, 10).is_err());
        assert!(MetricGrid::new(0.0, 25.0, 10).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let r = ScenarioResult {
            scenario: "linear/linear/200".into(),
            n: 200,
            replicates: 2,
            grid: vec![0.0, 1.0],
            truth: vec![0.0, 1.0],
            estimators: vec![EstimatorMetrics {
                estimator: "linear".into(),
                abs_bias: Some(0.25),
                rmse: Some(0.5),
                balance_flags: vec![],
                convergence_flags: vec![],
                successes: 2,
                failures: 0,
                failure_reasons: vec![],
                mean_curve: vec![0.0, 1.0],
            }],
        };
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &[r]).unwrap();
        let rows = read_metrics_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].abs_bias, Some(0.25));
        assert_eq!(rows[0].balance_rate, None);
    }
}
