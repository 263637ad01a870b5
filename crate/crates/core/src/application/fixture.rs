//! Synthetic stratified rate data with a known curve.
//!
//! Blocks carry two covariates; each block-year gets an exposure, and each
//! stratum gets person-time and a death count
//! `round(pt * exp(eta + noise))`, where the noise is a block effect plus a
//! block-year effect, both with standard deviation `noise_sd`.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::records::{AggregatedRecord, RecordSet};
use crate::error::{ErcError, Result};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FixtureShape {
    /// `slope * e` on the log-rate scale.
    Linear { slope: f64 },
    /// `scale * ln(1 + e)`.
    Sublinear { scale: f64 },
}

impl FixtureShape {
    pub fn effect(&self, e: f64) -> f64 {
        match *self {
            FixtureShape::Linear { slope } => slope * e,
            FixtureShape::Sublinear { scale } => scale * e.ln_1p(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ExposureLayout {
    /// Raw block-year exposure `confounding * x1 + N(0, 1)`, affinely mapped onto `[lo, hi]`.
    Rescaled { lo: f64, hi: f64 },
    /// Independent uniform draws; ignores confounding.
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureOptions {
    pub blocks: usize,
    pub years: usize,
    pub first_year: i32,
    pub regions: usize,
    pub age_bands: usize,
    pub followups: usize,
    pub exposure: ExposureLayout,
    /// Loading of the first block covariate in the raw exposure.
    pub confounding: f64,
    pub shape: FixtureShape,
    /// The exposure effect is multiplied by `1 + heterogeneity * x1`.
    pub heterogeneity: f64,
    pub noise_sd: f64,
    pub person_time: (f64, f64),
    pub baseline_log_rate: f64,
    pub seed: u64,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        Self {
            blocks: 50,
            years: 17,
            first_year: 2000,
            regions: 4,
            age_bands: 2,
            followups: 1,
            exposure: ExposureLayout::Rescaled { lo: 0.01, hi: 30.92 },
            confounding: 0.0,
            shape: FixtureShape::Linear { slope: 0.01 },
            heterogeneity: 0.0,
            noise_sd: 0.05,
            person_time: (2_000.0, 8_000.0),
            baseline_log_rate: -3.5,
            seed: 7,
        }
    }
}

const COVARIATE_EFFECTS: [f64; 2] = [0.15, -0.1];
const COVARIATE_NAMES: [&str; 2] = ["x1", "x2"];

impl FixtureOptions {
    fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.years == 0 || self.regions == 0 || self.age_bands == 0 || self.followups == 0 {
            return Err(ErcError::InvalidArgument("fixture dimensions must be positive".into()));
        }
        let (lo, hi) = self.person_time;
        if !(lo > 0.0 && hi >= lo) {
            return Err(ErcError::InvalidArgument("person-time range must be positive".into()));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(ErcError::InvalidArgument("noise sd must be nonnegative".into()));
        }
        Ok(())
    }

    /// Log rate without noise.
    pub fn eta(&self, e: f64, r: &AggregatedRecord, year_index: usize, region_index: usize) -> f64 {
        let age: f64 = r.age_band.trim_start_matches('a').parse().unwrap_or(0.0);
        let follow: f64 = r.followup.parse().unwrap_or(0.0);
        let stratum = 0.3 * age
            + if r.sex == "M" { 0.2 } else { 0.0 }
            + if r.dual == "1" { 0.25 } else { 0.0 }
            + 0.05 * follow;
        let cov: f64 = r.covariates.iter().zip(COVARIATE_EFFECTS).map(|(x, b)| x * b).sum();
        let modifier = 1.0 + self.heterogeneity * r.covariates[0];
        self.baseline_log_rate - 0.01 * year_index as f64 + 0.05 * region_index as f64 + stratum + cov
            + modifier * self.shape.effect(e)
    }

    fn indices(&self, r: &AggregatedRecord) -> (usize, usize) {
        let year = (r.year - self.first_year).max(0) as usize;
        let region = r.region.trim_start_matches('r').parse().unwrap_or(0);
        (year, region)
    }

    /// `exp` of the person-time weighted mean noiseless log rate at each level.
    pub fn truth(&self, set: &RecordSet, grid: &[f64]) -> Vec<f64> {
        let total: f64 = set.records.iter().map(|r| r.person_time).sum();
        grid.iter()
            .map(|&e| {
                let s: f64 = set
                    .records
                    .iter()
                    .map(|r| {
                        let (y, g) = self.indices(r);
                        r.person_time * self.eta(e, r, y, g)
                    })
                    .sum();
                (s / total).exp()
            })
            .collect()
    }
}

pub fn generate_fixture(opts: &FixtureOptions) -> Result<RecordSet> {
    opts.validate()?;
    let mut rng = rng_from_seed(opts.seed);
    let noise = Normal::new(0.0, opts.noise_sd).map_err(|e| ErcError::InvalidArgument(e.to_string()))?;
    let block_cov: Vec<[f64; 2]> =
        (0..opts.blocks).map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)]).collect();
    let block_noise: Vec<f64> = (0..opts.blocks).map(|_| noise.sample(&mut rng)).collect();

    let n_units = opts.blocks * opts.years;
    let mut unit_cov = Vec::with_capacity(n_units);
    let mut raw = Vec::with_capacity(n_units);
    for b in 0..opts.blocks {
        for _ in 0..opts.years {
            let drift: f64 = rng.sample(StandardNormal);
            let c = [block_cov[b][0] + 0.1 * drift, block_cov[b][1]];
            let z: f64 = rng.sample(StandardNormal);
            raw.push(match opts.exposure {
                ExposureLayout::Rescaled { .. } => opts.confounding * c[0] + z,
                ExposureLayout::Uniform { lo, hi } => rng.random_range(lo..=hi),
            });
            unit_cov.push(c);
        }
    }
    let exposure: Vec<f64> = match opts.exposure {
        ExposureLayout::Rescaled { lo, hi } => {
            let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
            let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = (max - min).max(f64::MIN_POSITIVE);
            raw.iter().map(|x| lo + (hi - lo) * (x - min) / span).collect()
        }
        ExposureLayout::Uniform { .. } => raw,
    };

    let mut records = Vec::new();
    for b in 0..opts.blocks {
        let region = b % opts.regions;
        for y in 0..opts.years {
            let u = b * opts.years + y;
            let eps = block_noise[b] + noise.sample(&mut rng);
            for age in 0..opts.age_bands {
                for sex in ["F", "M"] {
                    for dual in ["0", "1"] {
                        for follow in 0..opts.followups {
                            let mut r = AggregatedRecord {
                                block: format!("b{b:04}"),
                                year: opts.first_year + y as i32,
                                region: format!("r{region}"),
                                age_band: format!("a{age}"),
                                sex: sex.into(),
                                dual: dual.into(),
                                followup: follow.to_string(),
                                exposure: exposure[u],
                                covariates: unit_cov[u].to_vec(),
                                deaths: 0.0,
                                person_time: rng.random_range(opts.person_time.0..=opts.person_time.1).round(),
                            };
                            let eta = opts.eta(exposure[u], &r, y, region);
                            r.deaths = (r.person_time * (eta + eps).exp()).round();
                            records.push(r);
                        }
                    }
                }
            }
        }
    }
    RecordSet::new(COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(), records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_ranges() {
        let opts = FixtureOptions { blocks: 6, years: 3, ..Default::default() };
        let set = generate_fixture(&opts).unwrap();
        assert_eq!(set.len(), 6 * 3 * 2 * 2 * 2);
        assert_eq!(set.blocks().len(), 6);
        let lo = set.records.iter().map(|r| r.exposure).fold(f64::INFINITY, f64::min);
        let hi = set.records.iter().map(|r| r.exposure).fold(0.0, f64::max);
        assert!((lo - 0.01).abs() < 1e-12 && (hi - 30.92).abs() < 1e-9);
    }

    #[test]
    fn exposure_constant_within_block_year() {
        let set = generate_fixture(&FixtureOptions { blocks: 4, years: 2, ..Default::default() }).unwrap();
        for w in set.records.chunks(8) {
            assert!(w.iter().all(|r| r.exposure == w[0].exposure && r.covariates == w[0].covariates));
        }
    }

    #[test]
    fn noiseless_truth_is_reproduced_by_rates() {
        let opts = FixtureOptions { blocks: 3, years: 2, noise_sd: 0.0, person_time: (1e9, 1e9), ..Default::default() };
        let set = generate_fixture(&opts).unwrap();
        for r in &set.records {
            let (y, g) = opts.indices(r);
            assert!((r.rate().ln() - opts.eta(r.exposure, r, y, g)).abs() < 1e-6);
        }
    }
}
