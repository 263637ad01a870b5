//! Person-time weighted curve estimation on aggregated rate data.
//!
//! Design weights are computed once per block-year from its exposure and
//! covariates; each stratum record is then weighted by its block-year's
//! design weight times its person-time. The outcome is the log rate, and
//! curves are reported on the rate scale.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::records::{AggregatedRecord, RecordSet};
use crate::balance::{two_pass_entropy_weights, weighted_abs_correlation, BalanceDiagnostics};
use crate::erc::{linspace, ErcEstimate};
use crate::error::{ErcError, Result};
use crate::estimators::{EstimatorConfig, EstimatorKind};
use crate::gps::{build_matched_population, fit_gps};
use crate::regression::{fit_family, predict_erc, RegressionData, ResponseScale};
use crate::seed::{derive_seed, rng_from_seed};
use crate::stats::quantile;

pub const MIN_BOOTSTRAP_BLOCKS: usize = 20;
const Z_975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub trim: (f64, f64),
    pub reference: f64,
    pub grid_levels: usize,
    pub bootstrap_replicates: usize,
    pub seed: u64,
    pub estimator: EstimatorConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            trim: (0.05, 0.95),
            reference: 12.0,
            grid_levels: 100,
            bootstrap_replicates: 200,
            seed: 12,
            estimator: EstimatorConfig::default(),
        }
    }
}

impl AppConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.trim;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(ErcError::InvalidArgument(format!("trim quantiles ({lo}, {hi}) must satisfy 0 <= lo < hi <= 1")));
        }
        if self.grid_levels < 2 {
            return Err(ErcError::InvalidArgument("need at least two grid levels".into()));
        }
        self.estimator.matching.validate()
    }

    /// The reference level must lie inside the retained exposure range.
    pub fn check_reference(&self, range: (f64, f64)) -> Result<()> {
        if self.reference < range.0 || self.reference > range.1 {
            return Err(ErcError::ReferenceOutOfRange { reference: self.reference, lower: range.0, upper: range.1 });
        }
        Ok(())
    }
}

/// A block-year: the unit at which exposure, covariates and design weights live.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockYear {
    pub block: String,
    pub year: i32,
    pub exposure: f64,
    pub covariates: Vec<f64>,
}

/// Log-rate outcome, adjustment design and block-year structure.
#[derive(Debug, Clone)]
pub struct ModelTable {
    pub log_rate: Vec<f64>,
    pub person_time: Vec<f64>,
    pub exposure: Vec<f64>,
    /// Stratum indicators, block-year covariates, year and region indicators.
    pub columns: Vec<Vec<f64>>,
    pub labels: Vec<String>,
    /// Block-year index of each record.
    pub unit_of: Vec<usize>,
    pub units: Vec<BlockYear>,
    pub covariate_names: Vec<String>,
    /// Rate substituted for zero rates, if any were present.
    pub zero_replacement: Option<f64>,
}

impl ModelTable {
    pub fn len(&self) -> usize {
        self.log_rate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_rate.is_empty()
    }

    /// Column-major block-year covariates.
    pub fn unit_covariates(&self) -> Vec<Vec<f64>> {
        (0..self.covariate_names.len()).map(|j| self.units.iter().map(|u| u.covariates[j]).collect()).collect()
    }

    pub fn unit_exposure(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.exposure).collect()
    }
}

/// Indicator columns for every level but the first (sorted); a single level yields none.
fn indicators(values: &[&str], name: &str) -> Vec<(String, Vec<f64>)> {
    let levels: BTreeSet<&str> = values.iter().copied().collect();
    levels
        .into_iter()
        .skip(1)
        .map(|level| (format!("{name}={level}"), values.iter().map(|&v| if v == level { 1.0 } else { 0.0 }).collect()))
        .collect()
}

/// Rates, zero replacement (half the smallest positive rate), log transform
/// and the adjustment design.
pub fn prepare_outcome(set: &RecordSet) -> Result<ModelTable> {
    if set.is_empty() {
        return Err(ErcError::InvalidSampleSize(0));
    }
    let records = &set.records;
    let rates: Vec<f64> = records.iter().map(AggregatedRecord::rate).collect();
    let min_positive = rates.iter().copied().filter(|&r| r > 0.0).fold(f64::INFINITY, f64::min);
    if !min_positive.is_finite() {
        return Err(ErcError::AllRatesZero);
    }
    let replacement = 0.5 * min_positive;
    let zero_replacement = rates.iter().any(|&r| r == 0.0).then_some(replacement);
    let log_rate = rates.iter().map(|&r| if r > 0.0 { r.ln() } else { replacement.ln() }).collect();

    let mut unit_index: HashMap<(&str, i32), usize> = HashMap::new();
    let mut units = Vec::new();
    let mut unit_of = Vec::with_capacity(records.len());
    for r in records {
        let idx = *unit_index.entry((r.block.as_str(), r.year)).or_insert_with(|| {
            units.push(BlockYear { block: r.block.clone(), year: r.year, exposure: r.exposure, covariates: r.covariates.clone() });
            units.len() - 1
        });
        unit_of.push(idx);
    }

    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    let strata: [(&str, fn(&AggregatedRecord) -> &str); 4] = [
        ("age_band", |r| r.age_band.as_str()),
        ("sex", |r| r.sex.as_str()),
        ("dual", |r| r.dual.as_str()),
        ("followup", |r| r.followup.as_str()),
    ];
    for (name, get) in strata {
        let v: Vec<&str> = records.iter().map(get).collect();
        columns.extend(indicators(&v, name));
    }
    for (j, name) in set.covariate_names.iter().enumerate() {
        columns.push((format!("cov_{name}"), records.iter().map(|r| r.covariates[j]).collect()));
    }
    let years: Vec<String> = records.iter().map(|r| r.year.to_string()).collect();
    columns.extend(indicators(&years.iter().map(String::as_str).collect::<Vec<_>>(), "year"));
    let regions: Vec<&str> = records.iter().map(|r| r.region.as_str()).collect();
    columns.extend(indicators(&regions, "region"));

    let (labels, columns) = columns.into_iter().unzip();
    Ok(ModelTable {
        log_rate,
        person_time: records.iter().map(|r| r.person_time).collect(),
        exposure: records.iter().map(|r| r.exposure).collect(),
        columns,
        labels,
        unit_of,
        units,
        covariate_names: set.covariate_names.clone(),
        zero_replacement,
    })
}

/// Unweighted block-year exposure quantiles used for trimming.
pub fn trim_bounds(set: &RecordSet, trim: (f64, f64)) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(ErcError::InvalidSampleSize(0));
    }
    let mut seen = BTreeMap::new();
    for r in &set.records {
        seen.entry((r.block.as_str(), r.year)).or_insert(r.exposure);
    }
    let e: Vec<f64> = seen.into_values().collect();
    let lo = quantile(&e, trim.0);
    let hi = quantile(&e, trim.1);
    if !(hi > lo) {
        return Err(ErcError::DegenerateExposure);
    }
    Ok((lo, hi))
}

/// Drops records whose exposure falls outside the trimming quantiles; returns
/// the retained records and the retained exposure range.
pub fn trim_exposure(set: &RecordSet, trim: (f64, f64)) -> Result<(RecordSet, (f64, f64))> {
    let (lo, hi) = trim_bounds(set, trim)?;
    Ok((set.filter(|r| r.exposure >= lo && r.exposure <= hi), (lo, hi)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppBalance {
    pub covariates: Vec<String>,
    pub unadjusted: BalanceDiagnostics,
    pub adjusted: BalanceDiagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppFit {
    pub estimator: EstimatorKind,
    /// Rate-scale curve.
    pub estimate: ErcEstimate,
    pub balance: Option<AppBalance>,
}

impl AppFit {
    pub fn log_values(&self) -> Vec<f64> {
        self.estimate.values().iter().map(|v| v.ln()).collect()
    }
}

/// Block-year design weights for `kind`, or `None` for plain regression.
pub fn design_weights(table: &ModelTable, kind: EstimatorKind, grid: &[f64], cfg: &EstimatorConfig) -> Result<Option<Vec<f64>>> {
    let cov = table.unit_covariates();
    let e = table.unit_exposure();
    if e.iter().all(|&x| x == e[0]) {
        return Err(ErcError::DegenerateExposure);
    }
    if kind.uses_entropy() {
        let (_, second) = two_pass_entropy_weights(&cov, &e, &cfg.entropy)?;
        if !second.converged {
            return Err(ErcError::NotConverged);
        }
        return Ok(Some(second.weights));
    }
    if kind.uses_matching() {
        let (Some(&lo), Some(&hi)) = (grid.first(), grid.last()) else {
            return Err(ErcError::EmptyGrid);
        };
        let gps = fit_gps(&cov, &e, &cfg.boost)?;
        let hp = crate::gps::MatchHyperParams { levels: cfg.matching.levels.max(grid.len()), ..cfg.matching };
        let mp = build_matched_population(&cov, &e, &gps, &hp, (lo, hi))?;
        return Ok(Some(mp.weights()));
    }
    Ok(None)
}

/// Fits one estimator and evaluates it on `grid`, exponentiating the
/// person-time standardized log-rate prediction.
pub fn fit_application(table: &ModelTable, kind: EstimatorKind, grid: &[f64], cfg: &EstimatorConfig) -> Result<AppFit> {
    if table.is_empty() {
        return Err(ErcError::InvalidSampleSize(0));
    }
    let design = design_weights(table, kind, grid, cfg)?;
    let weights: Vec<f64> = match &design {
        Some(dw) => table.person_time.iter().zip(&table.unit_of).map(|(pt, &u)| dw[u] * pt).collect(),
        None => table.person_time.clone(),
    };
    let data = RegressionData::new(&table.exposure, &table.log_rate, &table.columns).with_labels(&table.labels);
    let model = fit_family(kind.family(), &data, &weights)?;
    let estimate = predict_erc(&model, grid, &table.columns, Some(&table.person_time), ResponseScale::Log)?;
    let balance = match design {
        Some(dw) => {
            let cov = table.unit_covariates();
            let e = table.unit_exposure();
            Some(AppBalance {
                covariates: table.covariate_names.clone(),
                unadjusted: weighted_abs_correlation(&cov, &e, &vec![1.0; e.len()])?,
                adjusted: weighted_abs_correlation(&cov, &e, &dw)?,
            })
        }
        None => None,
    };
    Ok(AppFit { estimator: kind, estimate, balance })
}

/// Curve divided by its value at `reference`. The reference level is
/// inserted into the grid if absent, so the result equals 1 there exactly.
pub fn relative_rate_curve(erc: &ErcEstimate, reference: f64) -> Result<ErcEstimate> {
    let grid = erc.grid();
    if grid.is_empty() || reference < grid[0] || reference > grid[grid.len() - 1] {
        return Err(ErcError::ReferenceOutOfRange {
            reference,
            lower: grid.first().copied().unwrap_or(f64::NAN),
            upper: grid.last().copied().unwrap_or(f64::NAN),
        });
    }
    let at_ref = erc.interpolate(reference)?;
    if !(at_ref > 0.0) {
        return Err(ErcError::InvalidArgument(format!("curve value {at_ref} at the reference is not positive")));
    }
    let mut grid = erc.grid().to_vec();
    let mut values: Vec<f64> = erc.values().iter().map(|v| v / at_ref).collect();
    let mut bands = erc.lower().zip(erc.upper()).map(|(l, u)| {
        (l.iter().map(|v| v / at_ref).collect::<Vec<_>>(), u.iter().map(|v| v / at_ref).collect::<Vec<_>>())
    });
    match grid.iter().position(|&g| g == reference) {
        Some(k) => {
            values[k] = 1.0;
            if let Some((l, u)) = bands.as_mut() {
                l[k] = l[k].min(1.0);
                u[k] = u[k].max(1.0);
            }
        }
        None => {
            let k = grid.partition_point(|&g| g < reference);
            grid.insert(k, reference);
            values.insert(k, 1.0);
            if let Some((l, u)) = bands.as_mut() {
                l.insert(k, 1.0);
                u.insert(k, 1.0);
            }
        }
    }
    let out = ErcEstimate::new(grid, values)?;
    match bands {
        Some((l, u)) => out.with_bands(l, u),
        None => Ok(out),
    }
}

/// `round(N / ln N)`.
pub fn m_of_n_size(n: usize) -> usize {
    let nf = n as f64;
    ((nf / nf.ln()).round() as usize).clamp(1, n)
}

/// Point estimate, bands and bookkeeping from a block bootstrap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub estimator: EstimatorKind,
    pub estimate: ErcEstimate,
    pub relative: ErcEstimate,
    pub reference: f64,
    pub n_blocks: usize,
    pub m: usize,
    pub replicates: usize,
    pub failures: usize,
    pub failure_reasons: Vec<(String, usize)>,
    /// More than half the replicates failed.
    pub unreliable: bool,
}

/// Resampled record set: `m` blocks drawn with replacement, each draw
/// relabelled so repeated blocks stay distinct units.
pub fn resample_blocks<R: Rng + ?Sized>(set: &RecordSet, blocks: &[String], m: usize, rng: &mut R) -> RecordSet {
    let mut by_block: HashMap<&str, Vec<&AggregatedRecord>> = HashMap::new();
    for r in &set.records {
        by_block.entry(r.block.as_str()).or_default().push(r);
    }
    let mut records = Vec::new();
    for draw in 0..m {
        let b = &blocks[rng.random_range(0..blocks.len())];
        for r in &by_block[b.as_str()] {
            let mut copy = (*r).clone();
            copy.block = format!("{b}#{draw}");
            records.push(copy);
        }
    }
    RecordSet { covariate_names: set.covariate_names.clone(), records }
}

/// M-of-N block bootstrap over an already trimmed record set. Each replicate
/// recomputes zero replacement, design weights and the outcome fit on the
/// fixed `grid`. Bands are `exp(log estimate +- 1.96 sd sqrt(M / N))`.
pub fn m_of_n_block_bootstrap(
    set: &RecordSet,
    kind: EstimatorKind,
    grid: &[f64],
    cfg: &AppConfig,
) -> Result<BootstrapResult> {
    let blocks = set.blocks();
    let n = blocks.len();
    if n < MIN_BOOTSTRAP_BLOCKS {
        return Err(ErcError::InvalidSampleSize(n));
    }
    let m = m_of_n_size(n);
    cfg.check_reference((grid[0], grid[grid.len() - 1]))?;
    let table = prepare_outcome(set)?;
    let point = fit_application(&table, kind, grid, &cfg.estimator)?;
    let relative_point = relative_rate_curve(&point.estimate, cfg.reference)?;
    let kind_index = EstimatorKind::ALL.iter().position(|&k| k == kind).unwrap_or(0) as u64;

    let outcomes: Vec<std::result::Result<(Vec<f64>, Vec<f64>), String>> = (0..cfg.bootstrap_replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_from_seed(derive_seed(cfg.seed, &[kind_index, b as u64]));
            let sample = resample_blocks(set, &blocks, m, &mut rng);
            let fit = prepare_outcome(&sample).and_then(|t| fit_application(&t, kind, grid, &cfg.estimator));
            match fit {
                Ok(f) => {
                    let rel = relative_rate_curve(&f.estimate, cfg.reference).map_err(|e| e.to_string())?;
                    Ok((f.log_values(), rel.values().iter().map(|v| v.ln()).collect()))
                }
                Err(e) => Err(e.to_string()),
            }
        })
        .collect();

    let mut reasons: BTreeMap<String, usize> = BTreeMap::new();
    let mut logs = Vec::new();
    let mut rel_logs = Vec::new();
    for o in outcomes {
        match o {
            Ok((a, b)) => {
                logs.push(a);
                rel_logs.push(b);
            }
            Err(msg) => *reasons.entry(msg).or_default() += 1,
        }
    }
    let failures: usize = reasons.values().sum();
    let unreliable = 2 * failures > cfg.bootstrap_replicates;
    let scale = (m as f64 / n as f64).sqrt();
    let banded = |curve: &ErcEstimate, reps: &[Vec<f64>]| -> Result<ErcEstimate> {
        if reps.len() < 2 {
            return Ok(curve.clone());
        }
        let center: Vec<f64> = curve.values().iter().map(|v| v.ln()).collect();
        let sd = pointwise_sd(reps);
        let lower = center.iter().zip(&sd).map(|(c, s)| (c - Z_975 * s * scale).exp()).collect();
        let upper = center.iter().zip(&sd).map(|(c, s)| (c + Z_975 * s * scale).exp()).collect();
        curve.clone().with_bands(lower, upper)
    };
    Ok(BootstrapResult {
        estimator: kind,
        estimate: banded(&point.estimate, &logs)?,
        relative: banded(&relative_point, &rel_logs)?,
        reference: cfg.reference,
        n_blocks: n,
        m,
        replicates: cfg.bootstrap_replicates,
        failures,
        failure_reasons: reasons.into_iter().collect(),
        unreliable,
    })
}

fn pointwise_sd(reps: &[Vec<f64>]) -> Vec<f64> {
    let b = reps.len() as f64;
    (0..reps[0].len())
        .map(|k| {
            let mean = reps.iter().map(|r| r[k]).sum::<f64>() / b;
            (reps.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (b - 1.0)).sqrt()
        })
        .collect()
}

/// Grid of `levels` points spanning the retained exposure range.
pub fn application_grid(range: (f64, f64), levels: usize) -> Vec<f64> {
    linspace(range.0, range.1, levels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(block: &str, year: i32, exposure: f64, deaths: f64, pt: f64) -> AggregatedRecord {
        AggregatedRecord {
            block: block.into(),
            year,
            region: "r0".into(),
            age_band: "a0".into(),
            sex: "F".into(),
            dual: "0".into(),
            followup: "0".into(),
            exposure,
            covariates: vec![],
            deaths,
            person_time: pt,
        }
    }

    fn set(records: Vec<AggregatedRecord>) -> RecordSet {
        RecordSet::new(vec![], records).unwrap()
    }

    #[test]
    fn zero_rates_become_half_the_minimum() {
        let s = set(vec![record("a", 1, 1.0, 0.0, 100.0), record("b", 1, 2.0, 2.0, 100.0), record("c", 1, 3.0, 4.0, 100.0)]);
        let t = prepare_outcome(&s).unwrap();
        let expect = [0.01f64, 0.02, 0.04].map(f64::ln);
        for (a, b) in t.log_rate.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(t.zero_replacement, Some(0.01));
    }

    #[test]
    fn no_zeros_is_a_plain_log() {
        let s = set(vec![record("a", 1, 1.0, 3.0, 10.0), record("b", 2, 2.0, 1.0, 50.0)]);
        let t = prepare_outcome(&s).unwrap();
        assert_eq!(t.log_rate, vec![0.3f64.ln(), 0.02f64.ln()]);
        assert_eq!(t.zero_replacement, None);
        assert_eq!(t.labels, vec!["year=2"]);
    }

    #[test]
    fn single_record_and_all_zero() {
        let t = prepare_outcome(&set(vec![record("a", 1, 1.0, 5.0, 10.0)])).unwrap();
        assert!(t.log_rate[0].is_finite());
        let z = set(vec![record("a", 1, 1.0, 0.0, 10.0), record("b", 1, 1.0, 0.0, 10.0)]);
        assert!(matches!(prepare_outcome(&z), Err(ErcError::AllRatesZero)));
    }

    #[test]
    fn full_trim_is_identity() {
        let s = set((0..20).map(|i| record(&format!("b{i}"), 1, i as f64, 1.0, 10.0)).collect());
        let (kept, range) = trim_exposure(&s, (0.0, 1.0)).unwrap();
        assert_eq!(kept, s);
        assert_eq!(range, (0.0, 19.0));
        let flat = set((0..5).map(|i| record(&format!("b{i}"), 1, 3.0, 1.0, 10.0)).collect());
        assert!(matches!(trim_exposure(&flat, (0.05, 0.95)), Err(ErcError::DegenerateExposure)));
    }

    #[test]
    fn identical_exposures_fail_to_fit() {
        let s = set((0..30).map(|i| record(&format!("b{i}"), 1, 3.0, 1.0 + i as f64, 10.0)).collect());
        let t = prepare_outcome(&s).unwrap();
        let grid = [2.0, 4.0];
        let r = fit_application(&t, EstimatorKind::Linear, &grid, &EstimatorConfig::default());
        assert!(matches!(r, Err(ErcError::DegenerateExposure)));
    }

    #[test]
    fn relative_curve_properties() {
        let grid = linspace(0.0, 20.0, 11);
        let up = ErcEstimate::new(grid.clone(), grid.iter().map(|e| 0.01 * (1.0 + 0.1 * e)).collect()).unwrap();
        let rel = relative_rate_curve(&up, 12.0).unwrap();
        let k = rel.grid().iter().position(|&g| g == 12.0).unwrap();
        assert_eq!(rel.values()[k], 1.0);
        assert!(rel.grid().iter().zip(rel.values()).filter(|(g, _)| **g < 12.0).all(|(_, v)| *v < 1.0));

        let off = relative_rate_curve(&up, 13.0).unwrap();
        assert_eq!(off.len(), 12);
        assert_eq!(off.interpolate(13.0).unwrap(), 1.0);
        assert_eq!(relative_rate_curve(&off, 13.0).unwrap(), off);

        let flat = ErcEstimate::new(grid.clone(), vec![0.3; grid.len()]).unwrap();
        assert!(relative_rate_curve(&flat, 7.5).unwrap().values().iter().all(|&v| v == 1.0));
        assert!(matches!(relative_rate_curve(&flat, 25.0), Err(ErcError::ReferenceOutOfRange { .. })));
    }

    #[test]
    fn m_of_n_rule() {
        assert_eq!(m_of_n_size(1000), 145);
        assert_eq!(m_of_n_size(20), 7);
    }

    #[test]
    fn config_checks() {
        assert!(AppConfig::default().validate().is_ok());
        assert!(AppConfig { trim: (0.5, 0.5), ..Default::default() }.validate().is_err());
        assert!(AppConfig::default().check_reference((4.26, 15.04)).is_ok());
        assert!(matches!(AppConfig::default().check_reference((1.0, 10.0)), Err(ErcError::ReferenceOutOfRange { .. })));
    }
}
