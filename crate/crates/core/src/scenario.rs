//! Simulated confounders, exposures and outcomes.
//!
//! Six covariates per unit: `C1..C4` standard normal, `C5` discrete uniform on a
//! small integer support and `C6` uniform on (-3, 3). Exposures come from one of
//! four models built on the cardinal function [`cardinal_gamma`]; outcomes are
//! Gaussian around one of six mean functions.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::erc::ErcEstimate;
use crate::error::{ErcError, Result};

pub const N_COVARIATES: usize = 6;

/// Standard deviation of the outcome noise.
pub const OUTCOME_NOISE_SD: f64 = 10.0;

/// Variance of the Gaussian exposure noise.
pub const EXPOSURE_NOISE_VARIANCE: f64 = 10.0;

const GAMMA_INTERCEPT: f64 = -0.8;
const GAMMA_COEFS: [f64; N_COVARIATES] = [0.1, 0.1, -0.1, 0.2, 0.1, 0.1];
const OUTCOME_COVARIATE_COEFS: [f64; N_COVARIATES] = [2.0, 2.0, 3.0, -1.0, 2.0, 2.0];
const THRESHOLD_AT: f64 = 5.0;

/// Size of the covariate sample used to evaluate true curves.
pub const TRUE_ERC_REFERENCE_SIZE: usize = 100_000;
/// Dedicated seed for the true-curve reference sample.
pub const TRUE_ERC_REFERENCE_SEED: u64 = 0x5eed_7e57_e4c0_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum C5Support {
    /// Integers -2..=2.
    #[default]
    FivePoint,
    /// {-2, 2}.
    TwoPoint,
}

impl C5Support {
    pub fn values(self) -> &'static [f64] {
        match self {
            C5Support::FivePoint => &[-2.0, -1.0, 0.0, 1.0, 2.0],
            C5Support::TwoPoint => &[-2.0, 2.0],
        }
    }
}

/// How the threshold mean function treats exposures above 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdForm {
    /// `1.5 * e * 1[e > 5]`, a jump of 7.5 at the threshold.
    #[default]
    Indicator,
    /// `1.5 * (e - 5)+`, continuous.
    Hinge,
}

/// Knobs that the published design leaves open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioOptions {
    pub c5_support: C5Support,
    pub threshold_form: ThresholdForm,
    /// Initial candidate multiple used to enforce nonnegative exposures.
    pub oversample: f64,
    pub oversample_cap: f64,
    pub outcome_noise_sd: f64,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            c5_support: C5Support::FivePoint,
            threshold_form: ThresholdForm::Indicator,
            oversample: 2.0,
            oversample_cap: 16.0,
            outcome_noise_sd: OUTCOME_NOISE_SD,
        }
    }
}

/// Column-major `n x 6` covariate design.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix {
    columns: [Vec<f64>; N_COVARIATES],
}

impl CovariateMatrix {
    pub fn from_columns(columns: [Vec<f64>; N_COVARIATES]) -> Result<Self> {
        let n = columns[0].len();
        if columns.iter().any(|c| c.len() != n) {
            return Err(ErcError::DimensionMismatch(
                "covariate columns differ in length".into(),
            ));
        }
        if columns.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ErcError::InvalidArgument("non-finite covariate".into()));
        }
        Ok(Self { columns })
    }

    pub fn from_rows(rows: &[[f64; N_COVARIATES]]) -> Result<Self> {
        let columns = std::array::from_fn(|j| rows.iter().map(|r| r[j]).collect());
        Self::from_columns(columns)
    }

    pub fn nrows(&self) -> usize {
        self.columns[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.nrows() == 0
    }

    pub fn row(&self, i: usize) -> [f64; N_COVARIATES] {
        std::array::from_fn(|j| self.columns[j][i])
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            columns: std::array::from_fn(|j| indices.iter().map(|&i| self.columns[j][i]).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExposureModelKind {
    Linear,
    HeavyTail,
    Nonlinear,
    Interaction,
}

impl ExposureModelKind {
    pub const ALL: [ExposureModelKind; 4] = [
        ExposureModelKind::Linear,
        ExposureModelKind::HeavyTail,
        ExposureModelKind::Nonlinear,
        ExposureModelKind::Interaction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExposureModelKind::Linear => "linear",
            ExposureModelKind::HeavyTail => "heavy-tail",
            ExposureModelKind::Nonlinear => "nonlinear",
            ExposureModelKind::Interaction => "interaction",
        }
    }

    /// Deterministic part of the exposure model.
    pub fn mean(self, c: &[f64; N_COVARIATES]) -> f64 {
        let g = 9.0 * cardinal_gamma(c);
        match self {
            ExposureModelKind::Linear | ExposureModelKind::HeavyTail => g + 18.0,
            ExposureModelKind::Nonlinear => g + 2.0 * c[2] * c[2] + 15.0,
            ExposureModelKind::Interaction => g + 2.0 * c[2] * c[2] + 2.0 * c[0] * c[3] + 15.0,
        }
    }
}

impl fmt::Display for ExposureModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExposureModelKind {
    type Err = ErcError;

    fn from_str(s: &str) -> Result<Self> {
        ExposureModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ErcError::InvalidArgument(format!("unknown exposure model `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveShape {
    Linear,
    Sublinear,
    Threshold,
}

/// One of the six outcome mean functions: a curve shape, optionally with
/// an exposure-by-covariate interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct OutcomeModelKind {
    pub shape: CurveShape,
    pub interaction: bool,
}

impl OutcomeModelKind {
    pub const ALL: [OutcomeModelKind; 6] = [
        OutcomeModelKind::new(CurveShape::Linear, false),
        OutcomeModelKind::new(CurveShape::Linear, true),
        OutcomeModelKind::new(CurveShape::Sublinear, false),
        OutcomeModelKind::new(CurveShape::Sublinear, true),
        OutcomeModelKind::new(CurveShape::Threshold, false),
        OutcomeModelKind::new(CurveShape::Threshold, true),
    ];

    pub const fn new(shape: CurveShape, interaction: bool) -> Self {
        Self { shape, interaction }
    }

    pub fn name(self) -> &'static str {
        match (self.shape, self.interaction) {
            (CurveShape::Linear, false) => "linear",
            (CurveShape::Linear, true) => "linear-int",
            (CurveShape::Sublinear, false) => "sublinear",
            (CurveShape::Sublinear, true) => "sublinear-int",
            (CurveShape::Threshold, false) => "threshold",
            (CurveShape::Threshold, true) => "threshold-int",
        }
    }
}

impl fmt::Display for OutcomeModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OutcomeModelKind {
    type Err = ErcError;

    fn from_str(s: &str) -> Result<Self> {
        OutcomeModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ErcError::InvalidArgument(format!("unknown outcome model `{s}`")))
    }
}

impl TryFrom<String> for OutcomeModelKind {
    type Error = ErcError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<OutcomeModelKind> for String {
    fn from(k: OutcomeModelKind) -> String {
        k.name().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scenario {
    pub exposure: ExposureModelKind,
    pub outcome: OutcomeModelKind,
    pub n: usize,
    pub seed: u64,
}

/// One simulated replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub covariates: CovariateMatrix,
    pub exposure: Vec<f64>,
    pub outcome: Vec<f64>,
    pub scenario: Scenario,
}

impl SimDataset {
    pub fn len(&self) -> usize {
        self.exposure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exposure.is_empty()
    }

    /// Writes columns `c1..c6, exposure, outcome`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["c1", "c2", "c3", "c4", "c5", "c6", "exposure", "outcome"])?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.covariates.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.exposure[i].to_string());
            rec.push(self.outcome[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn cardinal_gamma(c: &[f64; N_COVARIATES]) -> f64 {
    GAMMA_INTERCEPT + GAMMA_COEFS.iter().zip(c).map(|(a, x)| a * x).sum::<f64>()
}

/// Effect modifier used by the interaction outcome models.
pub fn effect_modifier(c: &[f64; N_COVARIATES]) -> f64 {
    -0.1 * c[0] + 0.1 * c[2] * c[2] + 0.1 * c[3] + 0.1 * c[4]
}

pub fn gen_covariates<R: Rng + ?Sized>(
    n: usize,
    support: C5Support,
    rng: &mut R,
) -> Result<CovariateMatrix> {
    if n == 0 {
        return Err(ErcError::InvalidSampleSize(n));
    }
    let mut columns: [Vec<f64>; N_COVARIATES] = std::array::from_fn(|_| Vec::with_capacity(n));
    let levels = support.values();
    for _ in 0..n {
        for col in columns.iter_mut().take(4) {
            col.push(StandardNormal.sample(rng));
        }
        columns[4].push(levels[rng.random_range(0..levels.len())]);
        // random_range on a half-open float range can return the lower bound.
        let c6 = loop {
            let v = rng.random_range(-3.0..3.0);
            if v > -3.0 {
                break v;
            }
        };
        columns[5].push(c6);
    }
    CovariateMatrix::from_columns(columns)
}

fn exposure_noise<R: Rng + ?Sized>(kind: ExposureModelKind, rng: &mut R) -> f64 {
    match kind {
        ExposureModelKind::HeavyTail => {
            let t = StudentT::new(3.0).expect("valid degrees of freedom");
            5f64.sqrt() * t.sample(rng)
        }
        _ => {
            let z: f64 = StandardNormal.sample(rng);
            EXPOSURE_NOISE_VARIANCE.sqrt() * z
        }
    }
}

/// Raw exposures (possibly negative) for every row of `covariates`.
pub fn draw_raw_exposure<R: Rng + ?Sized>(
    kind: ExposureModelKind,
    covariates: &CovariateMatrix,
    rng: &mut R,
) -> Vec<f64> {
    (0..covariates.nrows())
        .map(|i| kind.mean(&covariates.row(i)) + exposure_noise(kind, rng))
        .collect()
}

/// Draws exposures for a candidate pool and keeps `n` nonnegative pairs chosen
/// uniformly at random. Returned rows keep their original relative order.
pub fn gen_exposure<R: Rng + ?Sized>(
    kind: ExposureModelKind,
    candidates: &CovariateMatrix,
    n: usize,
    rng: &mut R,
) -> Result<(CovariateMatrix, Vec<f64>)> {
    if candidates.is_empty() || n == 0 {
        return Err(ErcError::InvalidSampleSize(n));
    }
    let raw = draw_raw_exposure(kind, candidates, rng);
    let keep: Vec<usize> = (0..raw.len()).filter(|&i| raw[i] >= 0.0).collect();
    if keep.len() < n {
        return Err(ErcError::InsufficientNonnegative {
            found: keep.len(),
            needed: n,
            multiplier: candidates.nrows() as f64 / n as f64,
        });
    }
    let mut chosen: Vec<usize> = index::sample(rng, keep.len(), n)
        .into_iter()
        .map(|k| keep[k])
        .collect();
    chosen.sort_unstable();
    let exposure = chosen.iter().map(|&i| raw[i]).collect();
    Ok((candidates.select(&chosen), exposure))
}

/// Covariates and nonnegative exposures of size `n`, oversampling candidates
/// and doubling the multiple on shortfall up to the configured cap.
pub fn gen_exposed_sample<R: Rng + ?Sized>(
    kind: ExposureModelKind,
    n: usize,
    options: &ScenarioOptions,
    rng: &mut R,
) -> Result<(CovariateMatrix, Vec<f64>)> {
    if n == 0 {
        return Err(ErcError::InvalidSampleSize(n));
    }
    let mut multiplier = options.oversample.max(1.0);
    loop {
        let pool_size = (multiplier * n as f64).ceil() as usize;
        let pool = gen_covariates(pool_size, options.c5_support, rng)?;
        match gen_exposure(kind, &pool, n, rng) {
            Ok(out) => return Ok(out),
            Err(ErcError::InsufficientNonnegative { found, needed, .. }) => {
                if multiplier * 2.0 > options.oversample_cap {
                    return Err(ErcError::InsufficientNonnegative { found, needed, multiplier });
                }
                multiplier *= 2.0;
            }
            Err(e) => return Err(e),
        }
    }
}

fn curve_term(shape: CurveShape, e: f64, threshold: ThresholdForm) -> f64 {
    match shape {
        CurveShape::Linear => e,
        CurveShape::Sublinear => 3.0 * (e + 1.0).ln(),
        CurveShape::Threshold => match threshold {
            ThresholdForm::Indicator => {
                if e > THRESHOLD_AT {
                    1.5 * e
                } else {
                    0.0
                }
            }
            ThresholdForm::Hinge => 1.5 * (e - THRESHOLD_AT).max(0.0),
        },
    }
}

/// Outcome mean `mu(e, c)` with the literal threshold indicator.
pub fn mean_outcome(kind: OutcomeModelKind, e: f64, c: &[f64; N_COVARIATES]) -> f64 {
    mean_outcome_with(kind, e, c, ThresholdForm::Indicator)
}

pub fn mean_outcome_with(
    kind: OutcomeModelKind,
    e: f64,
    c: &[f64; N_COVARIATES],
    threshold: ThresholdForm,
) -> f64 {
    let base = 20.0
        - OUTCOME_COVARIATE_COEFS
            .iter()
            .zip(c)
            .map(|(a, x)| a * x)
            .sum::<f64>();
    let curve = curve_term(kind.shape, e, threshold);
    let modifier = if kind.interaction { 1.0 + effect_modifier(c) } else { 1.0 };
    base + curve * modifier
}

pub fn gen_outcome<R: Rng + ?Sized>(
    kind: OutcomeModelKind,
    exposure: &[f64],
    covariates: &CovariateMatrix,
    options: &ScenarioOptions,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if exposure.len() != covariates.nrows() {
        return Err(ErcError::DimensionMismatch(format!(
            "{} exposures for {} covariate rows",
            exposure.len(),
            covariates.nrows()
        )));
    }
    let noise = Normal::new(0.0, options.outcome_noise_sd)
        .map_err(|e| ErcError::InvalidArgument(e.to_string()))?;
    Ok(exposure
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            mean_outcome_with(kind, e, &covariates.row(i), options.threshold_form) + noise.sample(rng)
        })
        .collect())
}

/// Full replicate for `scenario`; the stream is seeded from `scenario.seed`.
pub fn gen_dataset(scenario: Scenario, options: &ScenarioOptions) -> Result<SimDataset> {
    let mut rng = crate::seed::rng_from_seed(scenario.seed);
    let (covariates, exposure) = gen_exposed_sample(scenario.exposure, scenario.n, options, &mut rng)?;
    let outcome = gen_outcome(scenario.outcome, &exposure, &covariates, options, &mut rng)?;
    Ok(SimDataset { covariates, exposure, outcome, scenario })
}

/// Covariates used to evaluate true curves.
pub fn reference_covariates(options: &ScenarioOptions) -> CovariateMatrix {
    let mut rng = crate::seed::rng_from_seed(TRUE_ERC_REFERENCE_SEED);
    gen_covariates(TRUE_ERC_REFERENCE_SIZE, options.c5_support, &mut rng)
        .expect("reference size is positive")
}

/// Population curve: the mean of `mu(e, c)` over the reference covariates.
pub fn true_erc(
    kind: OutcomeModelKind,
    grid: &[f64],
    reference: &CovariateMatrix,
    threshold: ThresholdForm,
) -> Result<ErcEstimate> {
    if reference.is_empty() {
        return Err(ErcError::InvalidSampleSize(0));
    }
    // mu is affine in the covariate-only part, so average the pieces once.
    let n = reference.nrows() as f64;
    let mut base_mean = 0.0;
    let mut modifier_mean = 0.0;
    for i in 0..reference.nrows() {
        let c = reference.row(i);
        base_mean += mean_outcome_with(kind, 0.0, &c, ThresholdForm::Indicator);
        modifier_mean += effect_modifier(&c);
    }
    base_mean /= n;
    modifier_mean /= n;
    let scale = if kind.interaction { 1.0 + modifier_mean } else { 1.0 };
    let values = grid
        .iter()
        .map(|&e| base_mean + curve_term(kind.shape, e, threshold) * scale)
        .collect();
    ErcEstimate::new(grid.to_vec(), values)
}
