//! The seven curve estimators, fit together on one sample.
//!
//! Regression baselines adjust for the covariates linearly and standardize
//! over the sample. Entropy-weighted variants fit the same exposure terms
//! without covariates under the two-pass entropy weights. The matching
//! estimator fits an exposure-only spline to the matched pseudo-population.
//! Design-stage quantities (entropy weights, GPS model, matches) are computed
//! at most once per sample and shared.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::balance::{two_pass_entropy_weights, weighted_abs_correlation, BalanceDiagnostics, BalanceWeights, EntropyOptions};
use crate::erc::ErcEstimate;
use crate::error::{ErcError, Result};
use crate::gps::{build_matched_population, fit_gps, BoostParams, MatchHyperParams, MatchedPopulation};
use crate::regression::{fit_family, fit_gam_erc, predict_erc, ModelFamily, RegressionData, ResponseScale};
use crate::stats::quantile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Linear,
    Gam,
    ChangePoint,
    LinearEntropy,
    GamEntropy,
    ChangePointEntropy,
    CausalGps,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 7] = [
        EstimatorKind::Linear,
        EstimatorKind::Gam,
        EstimatorKind::ChangePoint,
        EstimatorKind::LinearEntropy,
        EstimatorKind::GamEntropy,
        EstimatorKind::ChangePointEntropy,
        EstimatorKind::CausalGps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Linear => "linear",
            EstimatorKind::Gam => "gam",
            EstimatorKind::ChangePoint => "change-point",
            EstimatorKind::LinearEntropy => "linear-entropy",
            EstimatorKind::GamEntropy => "gam-entropy",
            EstimatorKind::ChangePointEntropy => "change-point-entropy",
            EstimatorKind::CausalGps => "causal-gps",
        }
    }

    /// Human-readable label used in plots.
    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::Linear => "Linear",
            EstimatorKind::Gam => "GAM",
            EstimatorKind::ChangePoint => "Change point",
            EstimatorKind::LinearEntropy => "Linear entropy",
            EstimatorKind::GamEntropy => "GAM entropy",
            EstimatorKind::ChangePointEntropy => "Change point entropy",
            EstimatorKind::CausalGps => "CausalGPS",
        }
    }

    pub fn family(self) -> ModelFamily {
        match self {
            EstimatorKind::Linear | EstimatorKind::LinearEntropy => ModelFamily::Linear,
            EstimatorKind::Gam | EstimatorKind::GamEntropy | EstimatorKind::CausalGps => ModelFamily::Gam,
            EstimatorKind::ChangePoint | EstimatorKind::ChangePointEntropy => ModelFamily::ChangePoint,
        }
    }

    pub fn uses_entropy(self) -> bool {
        matches!(self, EstimatorKind::LinearEntropy | EstimatorKind::GamEntropy | EstimatorKind::ChangePointEntropy)
    }

    pub fn uses_matching(self) -> bool {
        self == EstimatorKind::CausalGps
    }

    pub fn is_design_based(self) -> bool {
        self.uses_entropy() || self.uses_matching()
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = ErcError;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ErcError::InvalidArgument(format!("unknown estimator `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub entropy: EntropyOptions,
    pub boost: BoostParams,
    pub matching: MatchHyperParams,
    /// Exposure quantiles bounding the matching levels; the span is further
    /// clipped to the evaluation grid.
    pub matching_quantiles: (f64, f64),
    /// Drop units outside the matching quantiles before fitting the GPS.
    pub matching_trim_units: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            entropy: EntropyOptions::default(),
            boost: BoostParams::default(),
            matching: MatchHyperParams::default(),
            matching_quantiles: (0.05, 0.95),
            matching_trim_units: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureStage {
    Design,
    Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorFailure {
    pub estimator: EstimatorKind,
    pub stage: FailureStage,
    pub message: String,
}

impl fmt::Display for EstimatorFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let stage = match self.stage {
            FailureStage::Design => "design",
            FailureStage::Outcome => "outcome",
        };
        write!(f, "{} {stage} stage: {}", self.estimator, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorFit {
    pub estimator: EstimatorKind,
    pub curve: std::result::Result<ErcEstimate, EstimatorFailure>,
    /// Balance of the design-stage weights, for design-based estimators.
    pub balance: Option<BalanceDiagnostics>,
    /// Whether the design stage converged (always true for baselines).
    pub converged: bool,
}

/// Shared design-stage output for one sample.
#[derive(Debug, Clone, Default)]
pub struct DesignStage {
    pub entropy: Option<std::result::Result<BalanceWeights, String>>,
    pub matching: Option<std::result::Result<MatchedDesign, String>>,
}

/// Matched pseudo-population with per-unit weights over the full sample
/// (zero for units trimmed before matching).
#[derive(Debug, Clone)]
pub struct MatchedDesign {
    pub population: MatchedPopulation,
    pub weights: Vec<f64>,
}

impl DesignStage {
    pub fn compute(
        covariates: &[Vec<f64>],
        exposure: &[f64],
        kinds: &[EstimatorKind],
        grid: &[f64],
        cfg: &EstimatorConfig,
    ) -> Self {
        let entropy = kinds.iter().any(|k| k.uses_entropy()).then(|| {
            two_pass_entropy_weights(covariates, exposure, &cfg.entropy)
                .map(|(_, second)| second)
                .map_err(|e| e.to_string())
        });
        let matching = kinds
            .iter()
            .any(|k| k.uses_matching())
            .then(|| match_sample(covariates, exposure, grid, cfg).map_err(|e| e.to_string()));
        Self { entropy, matching }
    }
}

/// Matching support: the configured exposure quantiles, clipped to the grid span.
pub fn matching_support(exposure: &[f64], grid: &[f64], quantiles: (f64, f64)) -> Result<(f64, f64)> {
    let (Some(&g0), Some(&g1)) = (grid.first(), grid.last()) else {
        return Err(ErcError::EmptyGrid);
    };
    let lo = quantile(exposure, quantiles.0).max(g0);
    let hi = quantile(exposure, quantiles.1).min(g1);
    if !(hi > lo) {
        return Err(ErcError::DegenerateExposure);
    }
    Ok((lo, hi))
}

pub fn match_sample(
    covariates: &[Vec<f64>],
    exposure: &[f64],
    grid: &[f64],
    cfg: &EstimatorConfig,
) -> Result<MatchedDesign> {
    let support = matching_support(exposure, grid, cfg.matching_quantiles)?;
    if !cfg.matching_trim_units {
        let gps = fit_gps(covariates, exposure, &cfg.boost)?;
        let population = build_matched_population(covariates, exposure, &gps, &cfg.matching, support)?;
        let weights = population.weights();
        return Ok(MatchedDesign { population, weights });
    }
    let lo = quantile(exposure, cfg.matching_quantiles.0);
    let hi = quantile(exposure, cfg.matching_quantiles.1);
    let kept: Vec<usize> = (0..exposure.len()).filter(|&i| exposure[i] >= lo && exposure[i] <= hi).collect();
    let sub_cov: Vec<Vec<f64>> = covariates.iter().map(|c| kept.iter().map(|&i| c[i]).collect()).collect();
    let sub_e: Vec<f64> = kept.iter().map(|&i| exposure[i]).collect();
    let gps = fit_gps(&sub_cov, &sub_e, &cfg.boost)?;
    let population = build_matched_population(&sub_cov, &sub_e, &gps, &cfg.matching, support)?;
    let mut weights = vec![0.0; exposure.len()];
    for (k, &i) in kept.iter().enumerate() {
        weights[i] = population.unit_counts[k] as f64;
    }
    Ok(MatchedDesign { population, weights })
}

/// Fits each requested estimator and evaluates it on `grid`. Failures are
/// reported per estimator and never abort the others.
pub fn fit_estimators(
    covariates: &[Vec<f64>],
    exposure: &[f64],
    outcome: &[f64],
    kinds: &[EstimatorKind],
    grid: &[f64],
    cfg: &EstimatorConfig,
) -> Vec<EstimatorFit> {
    let design = DesignStage::compute(covariates, exposure, kinds, grid, cfg);
    kinds
        .iter()
        .map(|&kind| fit_with_design(covariates, exposure, outcome, kind, grid, &design))
        .collect()
}

pub fn fit_with_design(
    covariates: &[Vec<f64>],
    exposure: &[f64],
    outcome: &[f64],
    kind: EstimatorKind,
    grid: &[f64],
    design: &DesignStage,
) -> EstimatorFit {
    let fail = |stage, message: String| EstimatorFailure { estimator: kind, stage, message };
    let outcome_err = |e: ErcError| fail(FailureStage::Outcome, e.to_string());
    let missing = || fail(FailureStage::Design, "design stage was not computed".into());

    if kind.uses_entropy() {
        let Some(weights) = &design.entropy else {
            return EstimatorFit { estimator: kind, curve: Err(missing()), balance: None, converged: false };
        };
        return match weights {
            Err(msg) => EstimatorFit {
                estimator: kind,
                curve: Err(fail(FailureStage::Design, msg.clone())),
                balance: None,
                converged: false,
            },
            Ok(bw) => {
                let data = RegressionData::new(exposure, outcome, &[]);
                let curve = fit_family(kind.family(), &data, &bw.weights)
                    .and_then(|m| predict_erc(&m, grid, &[], None, ResponseScale::Identity))
                    .map_err(outcome_err);
                EstimatorFit { estimator: kind, curve, balance: Some(bw.diagnostics.clone()), converged: bw.converged }
            }
        };
    }

    if kind.uses_matching() {
        let Some(md) = &design.matching else {
            return EstimatorFit { estimator: kind, curve: Err(missing()), balance: None, converged: false };
        };
        return match md {
            Err(msg) => EstimatorFit {
                estimator: kind,
                curve: Err(fail(FailureStage::Design, msg.clone())),
                balance: None,
                converged: false,
            },
            Ok(md) => {
                let balance = weighted_abs_correlation(covariates, exposure, &md.weights).ok();
                let data = RegressionData::new(exposure, outcome, &[]);
                let curve = fit_gam_erc(&data, &md.weights)
                    .and_then(|m| predict_erc(&m, grid, &[], None, ResponseScale::Identity))
                    .map_err(outcome_err);
                EstimatorFit { estimator: kind, curve, balance, converged: true }
            }
        };
    }

    let data = RegressionData::new(exposure, outcome, covariates);
    let w = vec![1.0; exposure.len()];
    let curve = fit_family(kind.family(), &data, &w)
        .and_then(|m| predict_erc(&m, grid, covariates, None, ResponseScale::Identity))
        .map_err(outcome_err);
    EstimatorFit { estimator: kind, curve, balance: None, converged: true }
}

/// Replaces the column at `index` by indicators for every value in `levels`
/// except the first.
pub fn one_hot_column(columns: &[Vec<f64>], index: usize, levels: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(columns.len() + levels.len());
    for (j, col) in columns.iter().enumerate() {
        if j == index {
            for &level in &levels[1..] {
                out.push(col.iter().map(|&v| if v == level { 1.0 } else { 0.0 }).collect());
            }
        } else {
            out.push(col.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::erc::linspace;
    use crate::scenario::{gen_dataset, ExposureModelKind, OutcomeModelKind, Scenario, ScenarioOptions};

    #[test]
    fn names_roundtrip() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.name().parse::<EstimatorKind>().unwrap(), k);
        }
        assert!("bogus".parse::<EstimatorKind>().is_err());
        assert_eq!(EstimatorKind::ALL.iter().filter(|k| k.is_design_based()).count(), 4);
    }

    #[test]
    fn all_seven_fit_a_moderate_sample() {
        let scenario = Scenario {
            exposure: ExposureModelKind::Linear,
            outcome: "linear".parse::<OutcomeModelKind>().unwrap(),
            n: 500,
            seed: 17,
        };
        let data = gen_dataset(scenario, &ScenarioOptions::default()).unwrap();
        let grid = linspace(0.0, 20.0, 21);
        let fits = fit_estimators(
            data.covariates.columns(),
            &data.exposure,
            &data.outcome,
            &EstimatorKind::ALL,
            &grid,
            &EstimatorConfig::default(),
        );
        assert_eq!(fits.len(), 7);
        for f in &fits {
            let curve = f.curve.as_ref().unwrap();
            assert_eq!(curve.len(), 21);
            assert_eq!(f.balance.is_some(), f.estimator.is_design_based());
        }
    }

    #[test]
    fn one_hot_drops_reference_level() {
        let cols = vec![vec![1.0, 2.0], vec![-2.0, 0.0]];
        let out = one_hot_column(&cols, 1, &[-2.0, 0.0, 2.0]);
        assert_eq!(out, vec![vec![1.0, 2.0], vec![0.0, 1.0], vec![0.0, 0.0]]);
    }
}
