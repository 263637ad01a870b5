//! The three outcome-model families and marginal standardization.
//!
//! Every family shares the layout `[1, exposure terms..., covariates...]`, so a
//! fitted curve is affine in the covariates and averaging predictions over a
//! reference sample reduces to evaluating at the reference covariate means.

use serde::{Deserialize, Serialize};

use super::spline::SplineBasis;
use super::wls::{wls_fit, DesignMatrix, WlsFit};
use crate::erc::ErcEstimate;
use crate::error::{ErcError, Result};
use crate::stats::{distinct_count, quantile_sorted};

pub const GAM_DF: usize = 4;
const BREAK_POINT_CANDIDATES: usize = 100;
const BREAK_POINT_LOWER_Q: f64 = 0.05;
const BREAK_POINT_UPPER_Q: f64 = 0.95;
const MIN_SIDE_SUPPORT: usize = 5;
const MIN_DISTINCT_FOR_BREAK: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    Linear,
    Gam,
    ChangePoint,
}

/// How exposure enters the design.
#[derive(Debug, Clone, PartialEq)]
pub enum ExposureTerms {
    Linear,
    Spline(SplineBasis),
    /// `e` and `(e - tau)+`.
    Hinge { tau: f64 },
}

impl ExposureTerms {
    pub fn family(&self) -> ModelFamily {
        match self {
            ExposureTerms::Linear => ModelFamily::Linear,
            ExposureTerms::Spline(_) => ModelFamily::Gam,
            ExposureTerms::Hinge { .. } => ModelFamily::ChangePoint,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ExposureTerms::Linear => 1,
            ExposureTerms::Spline(b) => b.df(),
            ExposureTerms::Hinge { .. } => 2,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn evaluate(&self, e: f64) -> Vec<f64> {
        match self {
            ExposureTerms::Linear => vec![e],
            ExposureTerms::Spline(b) => b.evaluate(e),
            ExposureTerms::Hinge { tau } => vec![e, (e - tau).max(0.0)],
        }
    }

    fn labels(&self) -> Vec<String> {
        match self {
            ExposureTerms::Linear => vec!["exposure".into()],
            ExposureTerms::Spline(b) => (1..=b.df()).map(|k| format!("spline{k}")).collect(),
            ExposureTerms::Hinge { .. } => vec!["exposure".into(), "exposure_above_break".into()],
        }
    }
}

/// Exposure, outcome and adjustment covariates (column-major) for one fit.
#[derive(Debug, Clone, Copy)]
pub struct RegressionData<'a> {
    pub exposure: &'a [f64],
    pub outcome: &'a [f64],
    pub covariates: &'a [Vec<f64>],
    pub covariate_labels: Option<&'a [String]>,
}

impl<'a> RegressionData<'a> {
    pub fn new(exposure: &'a [f64], outcome: &'a [f64], covariates: &'a [Vec<f64>]) -> Self {
        Self { exposure, outcome, covariates, covariate_labels: None }
    }

    pub fn with_labels(mut self, labels: &'a [String]) -> Self {
        self.covariate_labels = Some(labels);
        self
    }

    fn len(&self) -> usize {
        self.exposure.len()
    }

    fn validate(&self, w: &[f64]) -> Result<()> {
        let n = self.len();
        if self.outcome.len() != n || w.len() != n || self.covariates.iter().any(|c| c.len() != n) {
            return Err(ErcError::DimensionMismatch(
                "exposure, outcome, covariates and weights must align".into(),
            ));
        }
        if let Some(l) = self.covariate_labels {
            if l.len() != self.covariates.len() {
                return Err(ErcError::DimensionMismatch("covariate labels".into()));
            }
        }
        Ok(())
    }

    fn covariate_label(&self, j: usize) -> String {
        match self.covariate_labels {
            Some(l) => l[j].clone(),
            None => format!("c{}", j + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    terms: ExposureTerms,
    coefficients: Vec<f64>,
    std_errors: Vec<f64>,
    labels: Vec<String>,
    residual_variance: f64,
    weighted_sse: f64,
    exposure_range: (f64, f64),
}

impl FittedModel {
    pub fn family(&self) -> ModelFamily {
        self.terms.family()
    }

    pub fn terms(&self) -> &ExposureTerms {
        &self.terms
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn std_errors(&self) -> &[f64] {
        &self.std_errors
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn exposure_coefficients(&self) -> &[f64] {
        &self.coefficients[1..1 + self.terms.len()]
    }

    pub fn covariate_coefficients(&self) -> &[f64] {
        &self.coefficients[1 + self.terms.len()..]
    }

    /// Standard error of the `k`-th exposure coefficient.
    pub fn exposure_std_error(&self, k: usize) -> f64 {
        self.std_errors[1 + k]
    }

    pub fn break_point(&self) -> Option<f64> {
        match self.terms {
            ExposureTerms::Hinge { tau } => Some(tau),
            _ => None,
        }
    }

    pub fn residual_variance(&self) -> f64 {
        self.residual_variance
    }

    pub fn weighted_sse(&self) -> f64 {
        self.weighted_sse
    }

    pub fn exposure_range(&self) -> (f64, f64) {
        self.exposure_range
    }

    /// Exposure part of the linear predictor, excluding the intercept.
    pub fn exposure_effect(&self, e: f64) -> f64 {
        self.terms
            .evaluate(e)
            .iter()
            .zip(self.exposure_coefficients())
            .map(|(x, b)| x * b)
            .sum()
    }

    pub fn predict(&self, e: f64, covariates: &[f64]) -> f64 {
        self.intercept()
            + self.exposure_effect(e)
            + covariates
                .iter()
                .zip(self.covariate_coefficients())
                .map(|(x, b)| x * b)
                .sum::<f64>()
    }
}

fn build_design(data: &RegressionData<'_>, terms: &ExposureTerms) -> Result<DesignMatrix> {
    let mut columns: Vec<(String, Vec<f64>)> = Vec::with_capacity(1 + terms.len() + data.covariates.len());
    columns.push(("intercept".into(), vec![1.0; data.len()]));
    let rows: Vec<Vec<f64>> = data.exposure.iter().map(|&e| terms.evaluate(e)).collect();
    for (k, label) in terms.labels().into_iter().enumerate() {
        columns.push((label, rows.iter().map(|r| r[k]).collect()));
    }
    for (j, col) in data.covariates.iter().enumerate() {
        columns.push((data.covariate_label(j), col.clone()));
    }
    DesignMatrix::from_columns(&columns)
}

fn fit_with_terms(data: &RegressionData<'_>, w: &[f64], terms: ExposureTerms) -> Result<FittedModel> {
    let design = build_design(data, &terms)?;
    let WlsFit { coefficients, std_errors, weighted_sse, residual_variance, .. } =
        wls_fit(&design, data.outcome, w)?;
    let positive: Vec<f64> = data
        .exposure
        .iter()
        .zip(w)
        .filter(|(_, &wi)| wi > 0.0)
        .map(|(&e, _)| e)
        .collect();
    let lo = positive.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = positive.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(FittedModel {
        terms,
        coefficients,
        std_errors,
        labels: design.labels().to_vec(),
        residual_variance,
        weighted_sse,
        exposure_range: (lo, hi),
    })
}

/// Exposures carrying positive weight.
fn supported_exposure(data: &RegressionData<'_>, w: &[f64]) -> Vec<f64> {
    data.exposure
        .iter()
        .zip(w)
        .filter(|(_, &wi)| wi > 0.0)
        .map(|(&e, _)| e)
        .collect()
}

/// `y ~ 1 + e + covariates`.
pub fn fit_linear_erc(data: &RegressionData<'_>, w: &[f64]) -> Result<FittedModel> {
    data.validate(w)?;
    fit_with_terms(data, w, ExposureTerms::Linear)
}

/// `y ~ 1 + spline(e, df = 4) + covariates`.
pub fn fit_gam_erc(data: &RegressionData<'_>, w: &[f64]) -> Result<FittedModel> {
    fit_gam_erc_with_df(data, w, GAM_DF)
}

pub fn fit_gam_erc_with_df(data: &RegressionData<'_>, w: &[f64], df: usize) -> Result<FittedModel> {
    data.validate(w)?;
    let support = supported_exposure(data, w);
    if support.is_empty() {
        return Err(ErcError::ZeroWeights);
    }
    let basis = SplineBasis::from_data(&support, df)?;
    fit_with_terms(data, w, ExposureTerms::Spline(basis))
}

/// Candidate break points: up to 100 quantiles of the weighted-support
/// exposures between the 5th and 95th percentiles, each with at least five
/// observations on either side.
pub fn break_point_candidates(data: &RegressionData<'_>, w: &[f64]) -> Result<Vec<f64>> {
    let mut support = supported_exposure(data, w);
    if distinct_count(&support) < MIN_DISTINCT_FOR_BREAK {
        return Err(ErcError::InsufficientBreakPointSupport);
    }
    support.sort_by(f64::total_cmp);
    let mut taus: Vec<f64> = (0..BREAK_POINT_CANDIDATES)
        .map(|k| {
            let p = BREAK_POINT_LOWER_Q
                + (BREAK_POINT_UPPER_Q - BREAK_POINT_LOWER_Q) * k as f64 / (BREAK_POINT_CANDIDATES - 1) as f64;
            quantile_sorted(&support, p)
        })
        .collect();
    taus.dedup();
    let taus: Vec<f64> = taus
        .into_iter()
        .filter(|&tau| {
            let below = support.partition_point(|&e| e <= tau);
            below >= MIN_SIDE_SUPPORT && support.len() - below >= MIN_SIDE_SUPPORT
        })
        .collect();
    if taus.is_empty() {
        return Err(ErcError::InsufficientBreakPointSupport);
    }
    Ok(taus)
}

/// Weighted SSE of the hinge model at each candidate break point; candidates
/// whose design is rank-deficient are reported as `None`.
pub fn changepoint_profile(data: &RegressionData<'_>, w: &[f64]) -> Result<Vec<(f64, Option<f64>)>> {
    data.validate(w)?;
    let taus = break_point_candidates(data, w)?;
    Ok(taus
        .into_iter()
        .map(|tau| {
            let sse = fit_with_terms(data, w, ExposureTerms::Hinge { tau })
                .ok()
                .map(|m| m.weighted_sse);
            (tau, sse)
        })
        .collect())
}

/// `y ~ 1 + e + (e - tau)+ + covariates` with `tau` the global minimizer of
/// the profiled weighted SSE over the candidate grid (ties go to the smaller
/// `tau`).
pub fn fit_changepoint_erc(data: &RegressionData<'_>, w: &[f64]) -> Result<FittedModel> {
    data.validate(w)?;
    let taus = break_point_candidates(data, w)?;
    let mut best: Option<FittedModel> = None;
    let mut last_err = None;
    for tau in taus {
        match fit_with_terms(data, w, ExposureTerms::Hinge { tau }) {
            Ok(m) => {
                if best.as_ref().is_none_or(|b| m.weighted_sse < b.weighted_sse) {
                    best = Some(m);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(ErcError::InsufficientBreakPointSupport))
}

pub fn fit_family(family: ModelFamily, data: &RegressionData<'_>, w: &[f64]) -> Result<FittedModel> {
    match family {
        ModelFamily::Linear => fit_linear_erc(data, w),
        ModelFamily::Gam => fit_gam_erc(data, w),
        ModelFamily::ChangePoint => fit_changepoint_erc(data, w),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseScale {
    /// The model response is the outcome itself.
    #[default]
    Identity,
    /// The model response is a log rate; averaged predictions are exponentiated.
    Log,
}

/// Marginal standardization: for each grid level, the (weighted) average of
/// predictions over `reference` covariate rows with exposure set to that level.
pub fn predict_erc(
    model: &FittedModel,
    grid: &[f64],
    reference: &[Vec<f64>],
    standardization_weights: Option<&[f64]>,
    scale: ResponseScale,
) -> Result<ErcEstimate> {
    if grid.is_empty() {
        return Err(ErcError::EmptyGrid);
    }
    let theta = model.covariate_coefficients();
    if reference.len() != theta.len() {
        return Err(ErcError::DimensionMismatch(format!(
            "model has {} covariates, reference has {}",
            theta.len(),
            reference.len()
        )));
    }
    let means: Vec<f64> = match standardization_weights {
        Some(w) => {
            let total: f64 = w.iter().sum();
            if !(total > 0.0) {
                return Err(ErcError::ZeroWeights);
            }
            reference
                .iter()
                .map(|col| {
                    if col.len() != w.len() {
                        return Err(ErcError::DimensionMismatch("standardization weights".into()));
                    }
                    Ok(col.iter().zip(w).map(|(x, wi)| x * wi).sum::<f64>() / total)
                })
                .collect::<Result<_>>()?
        }
        None => reference
            .iter()
            .map(|col| col.iter().sum::<f64>() / col.len() as f64)
            .collect(),
    };
    let offset: f64 = model.intercept() + means.iter().zip(theta).map(|(m, b)| m * b).sum::<f64>();
    let values = grid
        .iter()
        .map(|&e| {
            let v = offset + model.exposure_effect(e);
            match scale {
                ResponseScale::Identity => v,
                ResponseScale::Log => v.exp(),
            }
        })
        .collect();
    ErcEstimate::new(grid.to_vec(), values)
}
