//! Caliper matching on exposure and generalized propensity score.
//!
//! For each target exposure level `w` and each unit `j`, the requested GPS
//! `p(w | c_j)` is matched against the observed units `i` whose exposure lies
//! within the caliper of `w`, minimizing
//! `lambda * |p*(w, c_j) - p*_i| + (1 - lambda) * |w* - e*_i|`, where `*`
//! denotes min-max scaling over the sample. Ties go to the lowest unit index.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::GpsModel;
use crate::balance::{weighted_abs_correlation, BalanceDiagnostics};
use crate::erc::{linspace, ErcEstimate};
use crate::error::{ErcError, Result};
use crate::regression::{fit_gam_erc, predict_erc, FittedModel, RegressionData, ResponseScale};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchHyperParams {
    /// Caliper in exposure units; `None` means support width / number of levels.
    pub caliper: Option<f64>,
    /// Weight on the GPS distance; `1 - scale` goes to the exposure distance.
    pub scale: f64,
    pub levels: usize,
}

impl Default for MatchHyperParams {
    fn default() -> Self {
        Self { caliper: None, scale: 0.5, levels: 100 }
    }
}

impl MatchHyperParams {
    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.caliper {
            if !(d > 0.0) {
                return Err(ErcError::InvalidArgument("caliper must be positive".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.scale) {
            return Err(ErcError::InvalidArgument("scale must lie in [0, 1]".into()));
        }
        if self.levels < 2 {
            return Err(ErcError::InvalidArgument("need at least two grid levels".into()));
        }
        Ok(())
    }

    pub fn caliper_for(&self, lo: f64, hi: f64) -> f64 {
        self.caliper.unwrap_or((hi - lo) / self.levels as f64)
    }
}

/// Per-sample quantities shared by every grid level.
#[derive(Debug, Clone)]
pub struct MatchingContext {
    exposure: Vec<f64>,
    /// Conditional exposure means `m(c_j)`.
    means: Vec<f64>,
    sigma: f64,
    gps_min: f64,
    gps_range: f64,
    e_min: f64,
    e_range: f64,
    /// Scaled observed GPS `p*_i`.
    gps_star: Vec<f64>,
    /// Scaled observed exposure `e*_i`.
    e_star: Vec<f64>,
    caliper: f64,
    scale: f64,
}

impl MatchingContext {
    pub fn new(covariates: &[Vec<f64>], exposure: &[f64], gps: &GpsModel, caliper: f64, scale: f64) -> Result<Self> {
        let n = exposure.len();
        if n == 0 || covariates.iter().any(|c| c.len() != n) {
            return Err(ErcError::DimensionMismatch("covariates and exposure must align".into()));
        }
        let means = gps.conditional_means(covariates);
        let sigma = gps.sigma();
        let observed: Vec<f64> = (0..n).map(|i| normal_pdf(exposure[i], means[i], sigma)).collect();
        let (gps_min, gps_max) = min_max(&observed);
        let (e_min, e_max) = min_max(exposure);
        let nonzero = |r: f64| if r > 0.0 { r } else { 1.0 };
        let gps_range = nonzero(gps_max - gps_min);
        let e_range = nonzero(e_max - e_min);
        Ok(Self {
            gps_star: observed.iter().map(|p| (p - gps_min) / gps_range).collect(),
            e_star: exposure.iter().map(|e| (e - e_min) / e_range).collect(),
            exposure: exposure.to_vec(),
            means,
            sigma,
            gps_min,
            gps_range,
            e_min,
            e_range,
            caliper,
            scale,
        })
    }

    pub fn len(&self) -> usize {
        self.exposure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exposure.is_empty()
    }

    pub fn caliper(&self) -> f64 {
        self.caliper
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Scaled requested GPS `p*(w, c_j)`.
    pub fn requested_gps_star(&self, w: f64, j: usize) -> f64 {
        (normal_pdf(w, self.means[j], self.sigma) - self.gps_min) / self.gps_range
    }

    pub fn observed_gps_star(&self, i: usize) -> f64 {
        self.gps_star[i]
    }

    pub fn exposure_star(&self, e: f64) -> f64 {
        (e - self.e_min) / self.e_range
    }

    /// Units with `|e_i - w| <= caliper`.
    pub fn eligible(&self, w: f64) -> Vec<usize> {
        (0..self.len()).filter(|&i| (self.exposure[i] - w).abs() <= self.caliper).collect()
    }

    /// Distance between the request of unit `j` at level `w` and candidate `i`.
    pub fn distance(&self, w: f64, j: usize, i: usize) -> f64 {
        self.scale * (self.requested_gps_star(w, j) - self.gps_star[i]).abs()
            + (1.0 - self.scale) * (self.exposure_star(w) - self.e_star[i]).abs()
    }

    /// Matched unit for every served unit at level `w`, or `None` when no
    /// unit falls inside the caliper.
    pub fn match_level(&self, w: f64) -> Option<Vec<usize>> {
        let mut cands = self.eligible(w);
        if cands.is_empty() {
            return None;
        }
        let lambda = self.scale;
        let w_star = self.exposure_star(w);
        cands.sort_by(|&a, &b| self.gps_star[a].total_cmp(&self.gps_star[b]).then(a.cmp(&b)));
        let offset: Vec<f64> = cands.iter().map(|&i| (1.0 - lambda) * (w_star - self.e_star[i]).abs()).collect();

        // For a request a >= p*_i the distance is lambda*a + (offset_i - lambda*p*_i);
        // for a <= p*_i it is -lambda*a + (offset_i + lambda*p*_i). Keep running
        // minimizers of the constant parts from each side.
        let better = |(v1, i1): (f64, usize), (v2, i2): (f64, usize)| v1 < v2 || (v1 == v2 && i1 < i2);
        let m = cands.len();
        let mut prefix = Vec::with_capacity(m);
        let mut best = (f64::INFINITY, usize::MAX);
        for k in 0..m {
            let key = (offset[k] - lambda * self.gps_star[cands[k]], cands[k]);
            if better(key, best) {
                best = key;
            }
            prefix.push(best.1);
        }
        let mut suffix = vec![usize::MAX; m];
        let mut best = (f64::INFINITY, usize::MAX);
        for k in (0..m).rev() {
            let key = (offset[k] + lambda * self.gps_star[cands[k]], cands[k]);
            if better(key, best) {
                best = key;
            }
            suffix[k] = best.1;
        }

        let sorted_gps: Vec<f64> = cands.iter().map(|&i| self.gps_star[i]).collect();
        let matches = (0..self.len())
            .map(|j| {
                let a = self.requested_gps_star(w, j);
                let pos = sorted_gps.partition_point(|&g| g <= a);
                let mut choice: Option<(f64, usize)> = None;
                for i in [pos.checked_sub(1).map(|k| prefix[k]), (pos < m).then(|| suffix[pos])]
                    .into_iter()
                    .flatten()
                {
                    let d = self.distance(w, j, i);
                    if choice.is_none_or(|c| better((d, i), c)) {
                        choice = Some((d, i));
                    }
                }
                choice.expect("at least one candidate").1
            })
            .collect();
        Some(matches)
    }
}

fn min_max(x: &[f64]) -> (f64, f64) {
    x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Matching counts at one grid level, sparse by matched unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMatches {
    pub level: f64,
    /// `(unit, count)` pairs sorted by unit.
    pub counts: Vec<(usize, u32)>,
}

impl LevelMatches {
    pub fn mass(&self) -> u64 {
        self.counts.iter().map(|c| c.1 as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPopulation {
    pub levels: Vec<LevelMatches>,
    /// Grid levels with no unit inside the caliper.
    pub empty_levels: Vec<f64>,
    /// Per-unit aggregate match counts (the matching weights).
    pub unit_counts: Vec<u64>,
    /// Served-unit requests left without a match.
    pub unmatched: u64,
    pub caliper: f64,
    pub scale: f64,
    pub support: (f64, f64),
}

impl MatchedPopulation {
    pub fn total_mass(&self) -> u64 {
        self.unit_counts.iter().sum()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.unit_counts.iter().map(|&c| c as f64).collect()
    }

    pub fn grid_size(&self) -> usize {
        self.levels.len() + self.empty_levels.len()
    }

    /// Columns `grid_level, unit_id, count`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["grid_level", "unit_id", "count"])?;
        for level in &self.levels {
            for &(unit, count) in &level.counts {
                w.write_record([level.level.to_string(), unit.to_string(), count.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Matches every unit at each of `hp.levels` equidistant levels spanning `support`.
pub fn build_matched_population(
    covariates: &[Vec<f64>],
    exposure: &[f64],
    gps: &GpsModel,
    hp: &MatchHyperParams,
    support: (f64, f64),
) -> Result<MatchedPopulation> {
    hp.validate()?;
    let (lo, hi) = support;
    if !(hi > lo) {
        return Err(ErcError::DegenerateExposure);
    }
    let caliper = hp.caliper_for(lo, hi);
    let ctx = MatchingContext::new(covariates, exposure, gps, caliper, hp.scale)?;
    let grid = linspace(lo, hi, hp.levels);

    let per_level: Vec<(f64, Option<Vec<(usize, u32)>>)> = grid
        .par_iter()
        .map(|&w| {
            let counts = ctx.match_level(w).map(|mut m| {
                m.sort_unstable();
                let mut out: Vec<(usize, u32)> = Vec::new();
                for i in m {
                    match out.last_mut() {
                        Some((u, c)) if *u == i => *c += 1,
                        _ => out.push((i, 1)),
                    }
                }
                out
            });
            (w, counts)
        })
        .collect();

    let n = exposure.len();
    let mut unit_counts = vec![0u64; n];
    let mut levels = Vec::new();
    let mut empty_levels = Vec::new();
    let mut unmatched = 0u64;
    for (w, counts) in per_level {
        match counts {
            Some(counts) => {
                for &(i, c) in &counts {
                    unit_counts[i] += c as u64;
                }
                levels.push(LevelMatches { level: w, counts });
            }
            None => {
                unmatched += n as u64;
                empty_levels.push(w);
            }
        }
    }
    if levels.is_empty() {
        return Err(ErcError::CaliperTooSmall);
    }
    Ok(MatchedPopulation { levels, empty_levels, unit_counts, unmatched, caliper, scale: hp.scale, support })
}

/// Weighted correlations with matching counts as weights.
pub fn matched_balance(covariates: &[Vec<f64>], exposure: &[f64], mp: &MatchedPopulation) -> Result<BalanceDiagnostics> {
    if mp.total_mass() == 0 {
        return Err(ErcError::ZeroWeights);
    }
    weighted_abs_correlation(covariates, exposure, &mp.weights())
}

/// Exposure-only spline model fit to the matched pseudo-population.
pub fn fit_matched_model(exposure: &[f64], outcome: &[f64], mp: &MatchedPopulation) -> Result<FittedModel> {
    if mp.total_mass() == 0 {
        return Err(ErcError::ZeroWeights);
    }
    let data = RegressionData::new(exposure, outcome, &[]);
    fit_gam_erc(&data, &mp.weights())
}

pub fn fit_matched_erc(exposure: &[f64], outcome: &[f64], mp: &MatchedPopulation, grid: &[f64]) -> Result<ErcEstimate> {
    let model = fit_matched_model(exposure, outcome, mp)?;
    predict_erc(&model, grid, &[], None, ResponseScale::Identity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gps::{fit_gps, BoostParams};
    use rand::Rng;

    fn sample(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = crate::seed::rng_from_seed(seed);
        let c: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let e = (0..n).map(|i| 5.0 + 2.0 * c[0][i] - c[1][i] + rng.random_range(-1.5..1.5)).collect();
        (c, e)
    }

    #[test]
    fn one_unit_per_level_is_matched_by_everyone() {
        let n = 60;
        let e = linspace(0.0, 10.0, n);
        let c = vec![vec![1.0; n]];
        let gps = fit_gps(&c, &e, &BoostParams::default()).unwrap();
        let hp = MatchHyperParams { levels: n, ..Default::default() };
        let mp = build_matched_population(&c, &e, &gps, &hp, (0.0, 10.0)).unwrap();
        assert!(mp.unit_counts.iter().all(|&k| k == n as u64));
        for level in &mp.levels {
            assert_eq!(level.counts.len(), 1);
            assert_eq!(level.mass(), n as u64);
        }
        assert_eq!(mp.unmatched, 0);
    }

    #[test]
    fn tiny_caliper_is_an_error() {
        let n = 60;
        let e: Vec<f64> = (0..n).map(|i| i as f64 + 0.5).collect();
        let c = vec![(0..n).map(|i| (i % 7) as f64).collect::<Vec<_>>()];
        let gps = fit_gps(&c, &e, &BoostParams::default()).unwrap();
        let hp = MatchHyperParams { caliper: Some(0.1), levels: 60, ..Default::default() };
        let r = build_matched_population(&c, &e, &gps, &hp, (0.0, 59.0));
        assert!(matches!(r, Err(ErcError::CaliperTooSmall)));
    }

    #[test]
    fn sweep_agrees_with_exhaustive_scan() {
        let (c, e) = sample(150, 4);
        let gps = fit_gps(&c, &e, &BoostParams::default()).unwrap();
        for scale in [0.0, 0.3, 0.5, 1.0] {
            let ctx = MatchingContext::new(&c, &e, &gps, 0.4, scale).unwrap();
            for &w in &linspace(2.0, 8.0, 25) {
                let Some(found) = ctx.match_level(w) else { continue };
                let cands = ctx.eligible(w);
                for (j, &i) in found.iter().enumerate() {
                    let best = cands
                        .iter()
                        .copied()
                        .min_by(|&a, &b| ctx.distance(w, j, a).total_cmp(&ctx.distance(w, j, b)).then(a.cmp(&b)))
                        .unwrap();
                    assert_eq!(i, best, "scale {scale}, level {w}, unit {j}");
                }
            }
        }
    }

    #[test]
    fn mass_identity_and_caliper_monotonicity() {
        let (c, e) = sample(300, 5);
        let gps = fit_gps(&c, &e, &BoostParams::default()).unwrap();
        let mut prev = u64::MAX;
        for caliper in [0.02, 0.05, 0.1, 0.3, 1.0] {
            let hp = MatchHyperParams { caliper: Some(caliper), ..Default::default() };
            let mp = build_matched_population(&c, &e, &gps, &hp, (1.0, 9.0)).unwrap();
            let n = e.len() as u64;
            assert_eq!(mp.total_mass(), mp.levels.len() as u64 * n);
            assert_eq!(mp.total_mass(), mp.grid_size() as u64 * n - mp.unmatched);
            assert!(mp.unmatched <= prev);
            prev = mp.unmatched;
        }
    }

    #[test]
    fn deterministic_and_csv_roundtrip() {
        let (c, e) = sample(200, 6);
        let gps = fit_gps(&c, &e, &BoostParams::default()).unwrap();
        let hp = MatchHyperParams::default();
        let a = build_matched_population(&c, &e, &gps, &hp, (2.0, 8.0)).unwrap();
        let b = build_matched_population(&c, &e, &gps, &hp, (2.0, 8.0)).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let mut rdr = csv::Reader::from_reader(buf.as_slice());
        let total: u64 = rdr.records().map(|r| r.unwrap()[2].parse::<u64>().unwrap()).sum();
        assert_eq!(total, a.total_mass());
    }

    #[test]
    fn uniform_counts_give_unweighted_correlation() {
        let (c, e) = sample(100, 7);
        let mp = MatchedPopulation {
            levels: vec![],
            empty_levels: vec![],
            unit_counts: vec![3; 100],
            unmatched: 0,
            caliper: 1.0,
            scale: 0.5,
            support: (0.0, 1.0),
        };
        let a = matched_balance(&c, &e, &mp).unwrap();
        let b = weighted_abs_correlation(&c, &e, &[1.0; 100]).unwrap();
        for (x, y) in a.abs_corr.iter().zip(&b.abs_corr) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_outcome_gives_flat_curve() {
        let (c, e) = sample(200, 8);
        let gps = fit_gps(&c, &e, &BoostParams::default()).unwrap();
        let mp = build_matched_population(&c, &e, &gps, &MatchHyperParams::default(), (2.0, 8.0)).unwrap();
        let y = vec![4.25; 200];
        let erc = fit_matched_erc(&e, &y, &mp, &linspace(2.0, 8.0, 11)).unwrap();
        assert!(erc.values().iter().all(|v| (v - 4.25).abs() < 1e-8));
    }
}
