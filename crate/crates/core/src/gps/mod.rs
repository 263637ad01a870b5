//! Generalized propensity score model and caliper matching.

mod boost;
mod matching;

pub use boost::{fit_boosted_trees, BoostParams, BoostedTrees, RegressionTree};
pub use matching::{
    build_matched_population, fit_matched_erc, fit_matched_model, matched_balance, normal_pdf, LevelMatches,
    MatchHyperParams, MatchedPopulation, MatchingContext,
};

use crate::error::{ErcError, Result};
use crate::stats::std_dev;

pub const MIN_GPS_SAMPLE: usize = 50;

/// Normal GPS: `e | c ~ N(m(c), sigma^2)` with `m` fit by boosting.
#[derive(Debug, Clone, PartialEq)]
pub struct GpsModel {
    predictor: BoostedTrees,
    sigma: f64,
    params: BoostParams,
}

impl GpsModel {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn params(&self) -> &BoostParams {
        &self.params
    }

    pub fn predictor(&self) -> &BoostedTrees {
        &self.predictor
    }

    /// `m(c_j)` for each row of column-major `covariates`.
    pub fn conditional_means(&self, covariates: &[Vec<f64>]) -> Vec<f64> {
        self.predictor.predict(covariates)
    }

    /// `p(e | c)` for a single covariate row.
    pub fn density(&self, e: f64, row: &[f64]) -> f64 {
        normal_pdf(e, self.predictor.predict_row(row), self.sigma)
    }
}

pub fn fit_gps(covariates: &[Vec<f64>], exposure: &[f64], params: &BoostParams) -> Result<GpsModel> {
    let n = exposure.len();
    if n < MIN_GPS_SAMPLE {
        return Err(ErcError::InvalidSampleSize(n));
    }
    if exposure.iter().all(|&e| e == exposure[0]) {
        return Err(ErcError::DegenerateExposure);
    }
    let predictor = fit_boosted_trees(covariates, exposure, params)?;
    let fitted = predictor.predict(covariates);
    let residuals: Vec<f64> = exposure.iter().zip(&fitted).map(|(e, m)| e - m).collect();
    let sigma = std_dev(&residuals);
    if !(sigma > 0.0) {
        return Err(ErcError::DegenerateExposure);
    }
    Ok(GpsModel { predictor, sigma, params: *params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn density_integrates_to_one() {
        let mut rng = crate::seed::rng_from_seed(11);
        let c: Vec<Vec<f64>> = (0..2).map(|_| (0..200).map(|_| rng.random::<f64>()).collect()).collect();
        let e: Vec<f64> = (0..200).map(|i| 3.0 * c[0][i] + rng.random::<f64>()).collect();
        let gps = fit_gps(&c, &e, &BoostParams::default()).unwrap();
        let row = [c[0][0], c[1][0]];
        let m = gps.predictor().predict_row(&row);
        let s = gps.sigma();
        // Composite Simpson over +-8 sigma.
        let k = 4000;
        let h = 16.0 * s / k as f64;
        let mut total = 0.0;
        for i in 0..=k {
            let x = m - 8.0 * s + i as f64 * h;
            let wt = if i == 0 || i == k { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            total += wt * gps.density(x, &row);
        }
        total *= h / 3.0;
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn rejects_small_or_constant_input() {
        let c = vec![vec![0.0; 40]];
        assert!(matches!(fit_gps(&c, &[1.0; 40], &BoostParams::default()), Err(ErcError::InvalidSampleSize(40))));
        let c = vec![(0..60).map(f64::from).collect::<Vec<_>>()];
        assert!(matches!(fit_gps(&c, &[2.0; 60], &BoostParams::default()), Err(ErcError::DegenerateExposure)));
    }
}
