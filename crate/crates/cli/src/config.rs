//! Run configuration: one TOML file, then command-line overrides.
//!
//! ```toml
//! seed = 20240501
//! out = "results"
//! jobs = 4
//! estimators = ["linear", "gam", "causal-gps"]
//! scenarios = ["linear/*/1000"]
//!
//! [simulation]
//! replicates = 100
//! sample_sizes = [200, 1000, 10000]
//!
//! [application]
//! data = "fixtures/application.csv"
//! reference = 12.0
//! bootstrap_replicates = 200
//! ```

use std::path::{Path, PathBuf};

use erc_core::application::AppConfig;
use erc_core::estimators::EstimatorKind;
use erc_core::simulation::{Cell, SimulationConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const OUT_DIR_ENV: &str = "ERC_OUT_DIR";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    /// Overrides the estimator lists of both sections.
    pub estimators: Option<Vec<String>>,
    /// Cell selectors `exposure/outcome/n`; any component may be `*`.
    pub scenarios: Option<Vec<String>>,
    pub simulation: SimulationConfig,
    pub application: ApplicationSection,
    pub fit: FitSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApplicationSection {
    pub data: Option<PathBuf>,
    pub estimators: Vec<EstimatorKind>,
    #[serde(flatten)]
    pub settings: AppConfig,
}

impl Default for ApplicationSection {
    fn default() -> Self {
        Self {
            data: None,
            estimators: EstimatorKind::ALL.to_vec(),
            settings: AppConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSection {
    /// CSV with `exposure`, `outcome` and numeric covariate columns. When
    /// absent, one simulated replicate of the first selected cell is used.
    pub data: Option<PathBuf>,
    pub replicate: usize,
}

/// Flags shared by every verb.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Comma-separated estimator names.
    #[arg(long, global = true, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    /// Comma-separated cell selectors such as `linear/threshold/1000` or `*/linear-int/*`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub scenarios: Option<Vec<String>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Reads `--config` if given and applies the flag overrides.
    pub fn resolve(flags: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match &flags.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if flags.seed.is_some() {
            cfg.seed = flags.seed;
        }
        if flags.out.is_some() {
            cfg.out = flags.out.clone();
        }
        if flags.jobs.is_some() {
            cfg.jobs = flags.jobs;
        }
        if flags.estimators.is_some() {
            cfg.estimators = flags.estimators.clone();
        }
        if flags.scenarios.is_some() {
            cfg.scenarios = flags.scenarios.clone();
        }
        if let Some(seed) = cfg.seed {
            cfg.simulation.master_seed = seed;
            cfg.application.settings.seed = seed;
        }
        if let Some(names) = &cfg.estimators {
            let kinds = parse_estimators(names)?;
            cfg.simulation.estimators = kinds.clone();
            cfg.application.estimators = kinds;
        }
        if cfg.jobs == Some(0) {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("results"))
    }

    /// Selected cells in canonical grid order.
    pub fn cells(&self) -> Result<Vec<Cell>, CliError> {
        let all = self.simulation.cells();
        let Some(selectors) = &self.scenarios else {
            return Ok(all);
        };
        let selectors: Vec<[String; 3]> = selectors
            .iter()
            .map(|s| parse_selector(s))
            .collect::<Result<_, _>>()?;
        let picked: Vec<Cell> = all
            .into_iter()
            .filter(|c| {
                let parts = [
                    c.exposure.to_string(),
                    c.outcome.to_string(),
                    c.n.to_string(),
                ];
                selectors
                    .iter()
                    .any(|sel| sel.iter().zip(&parts).all(|(s, p)| s == "*" || s == p))
            })
            .collect();
        if picked.is_empty() {
            return Err(CliError::Config(format!(
                "no configured cell matches {selectors:?}"
            )));
        }
        Ok(picked)
    }
}

pub fn parse_estimators(names: &[String]) -> Result<Vec<EstimatorKind>, CliError> {
    if names.is_empty() {
        return Err(CliError::Config("estimator list is empty".into()));
    }
    names
        .iter()
        .map(|n| {
            n.trim()
                .parse::<EstimatorKind>()
                .map_err(|e| CliError::Config(e.to_string()))
        })
        .collect()
}

fn parse_selector(s: &str) -> Result<[String; 3], CliError> {
    let parts: Vec<&str> = s.trim().split('/').collect();
    let [e, o, n] = parts[..] else {
        return Err(CliError::Config(format!(
            "scenario selector `{s}` is not exposure/outcome/n"
        )));
    };
    if e != "*" {
        e.parse::<erc_core::scenario::ExposureModelKind>()
            .map_err(|x| CliError::Config(x.to_string()))?;
    }
    if o != "*" {
        o.parse::<erc_core::scenario::OutcomeModelKind>()
            .map_err(|x| CliError::Config(x.to_string()))?;
    }
    if n != "*" {
        n.parse::<usize>()
            .map_err(|_| CliError::Config(format!("bad sample size in `{s}`")))?;
    }
    Ok([e.to_string(), o.to_string(), n.to_string()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_overrides() {
        let text = r#"
            seed = 5
            estimators = ["linear", "gam"]
            [simulation]
            replicates = 3
            sample_sizes = [200]
            [application]
            reference = 10.0
        "#;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, text).unwrap();
        let flags = Overrides {
            config: Some(path),
            seed: Some(9),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(&flags).unwrap();
        assert_eq!(cfg.simulation.master_seed, 9);
        assert_eq!(cfg.simulation.replicates, 3);
        assert_eq!(
            cfg.simulation.estimators,
            vec![EstimatorKind::Linear, EstimatorKind::Gam]
        );
        assert_eq!(cfg.application.settings.reference, 10.0);
        assert_eq!(cfg.cells().unwrap().len(), 24);
    }

    #[test]
    fn selectors_filter_cells() {
        let cfg = RunConfig {
            scenarios: Some(vec![
                "linear/*/1000".into(),
                "nonlinear/threshold/200".into(),
            ]),
            ..Default::default()
        };
        let ids: Vec<String> = cfg.cells().unwrap().iter().map(|c| c.id()).collect();
        assert_eq!(ids.len(), 7);
        assert!(ids.contains(&"nonlinear/threshold/200".to_string()));
        let bad = RunConfig {
            scenarios: Some(vec!["linear/*".into()]),
            ..Default::default()
        };
        assert!(bad.cells().is_err());
    }

    #[test]
    fn bad_estimators_rejected() {
        assert!(parse_estimators(&[]).is_err());
        assert!(parse_estimators(&["ols".into()]).is_err());
    }
}
