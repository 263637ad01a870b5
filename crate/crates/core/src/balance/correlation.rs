use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{ErcError, Result};

/// Covariate balance threshold on the mean absolute weighted correlation.
pub const BALANCE_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceDiagnostics {
    /// Absolute weighted correlation of each covariate with exposure.
    pub abs_corr: Vec<f64>,
    pub mean_abs_corr: f64,
    /// Columns with zero weighted variance (their correlation is reported as 0).
    pub degenerate: Vec<bool>,
}

impl BalanceDiagnostics {
    pub fn is_balanced(&self) -> bool {
        self.mean_abs_corr < BALANCE_THRESHOLD
    }

    pub fn max_abs_corr(&self) -> f64 {
        self.abs_corr.iter().copied().fold(0.0, f64::max)
    }
}

/// Weighted Pearson correlation, in absolute value, between each covariate
/// column and the exposure.
pub fn weighted_abs_correlation(
    covariates: &[Vec<f64>],
    exposure: &[f64],
    weights: &[f64],
) -> Result<BalanceDiagnostics> {
    let n = exposure.len();
    if weights.len() != n || covariates.iter().any(|c| c.len() != n) {
        return Err(ErcError::DimensionMismatch("covariates, exposure and weights must align".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(ErcError::InvalidArgument("weights must be nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(ErcError::ZeroWeights);
    }
    let wmean = |x: &[f64]| x.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>() / total;
    let me = wmean(exposure);
    let ve: f64 = exposure.iter().zip(weights).map(|(e, w)| w * (e - me).powi(2)).sum::<f64>() / total;

    let mut abs_corr = Vec::with_capacity(covariates.len());
    let mut degenerate = Vec::with_capacity(covariates.len());
    for col in covariates {
        let mc = wmean(col);
        let (mut cov, mut vc) = (0.0, 0.0);
        for i in 0..n {
            let dc = col[i] - mc;
            cov += weights[i] * dc * (exposure[i] - me);
            vc += weights[i] * dc * dc;
        }
        cov /= total;
        vc /= total;
        if vc <= 0.0 || ve <= 0.0 {
            abs_corr.push(0.0);
            degenerate.push(true);
        } else {
            abs_corr.push((cov / (vc * ve).sqrt()).abs().min(1.0));
            degenerate.push(false);
        }
    }
    let mean_abs_corr = if abs_corr.is_empty() {
        0.0
    } else {
        abs_corr.iter().sum::<f64>() / abs_corr.len() as f64
    };
    Ok(BalanceDiagnostics { abs_corr, mean_abs_corr, degenerate })
}

/// Columns `covariate, unadjusted, adjusted`.
pub fn write_balance_csv<W: Write>(
    writer: W,
    labels: &[String],
    unadjusted: &BalanceDiagnostics,
    adjusted: &BalanceDiagnostics,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["covariate", "unadjusted", "adjusted"])?;
    for (j, label) in labels.iter().enumerate() {
        w.write_record([
            label.clone(),
            unadjusted.abs_corr[j].to_string(),
            adjusted.abs_corr[j].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
