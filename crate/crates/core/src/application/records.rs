//! Aggregated stratum records: CSV schema, ingest and export.
//!
//! Required columns, in any order: `block, year, region, age_band, sex, dual,
//! followup, exposure, deaths, person_time`. Every column whose name starts
//! with `cov_` is read as a block-year covariate.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{ErcError, Result};

pub const REQUIRED_COLUMNS: [&str; 10] =
    ["block", "year", "region", "age_band", "sex", "dual", "followup", "exposure", "deaths", "person_time"];
pub const COVARIATE_PREFIX: &str = "cov_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedRecord {
    pub block: String,
    pub year: i32,
    pub region: String,
    pub age_band: String,
    pub sex: String,
    pub dual: String,
    pub followup: String,
    /// Annual mean exposure of the block-year.
    pub exposure: f64,
    /// Block-year covariates, in the order of [`RecordSet::covariate_names`].
    pub covariates: Vec<f64>,
    pub deaths: f64,
    pub person_time: f64,
}

impl AggregatedRecord {
    pub fn rate(&self) -> f64 {
        self.deaths / self.person_time
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSet {
    pub covariate_names: Vec<String>,
    pub records: Vec<AggregatedRecord>,
}

impl RecordSet {
    pub fn new(covariate_names: Vec<String>, records: Vec<AggregatedRecord>) -> Result<Self> {
        for (k, r) in records.iter().enumerate() {
            if r.covariates.len() != covariate_names.len() {
                return Err(ErcError::DimensionMismatch(format!(
                    "record {k} has {} covariates, expected {}",
                    r.covariates.len(),
                    covariate_names.len()
                )));
            }
            validate(r).map_err(|message| ErcError::MalformedRow { line: k as u64 + 2, message })?;
        }
        Ok(Self { covariate_names, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct block ids in first-appearance order.
    pub fn blocks(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        self.records.iter().filter(|r| seen.insert(r.block.as_str())).map(|r| r.block.clone()).collect()
    }

    pub fn filter(&self, keep: impl Fn(&AggregatedRecord) -> bool) -> Self {
        Self {
            covariate_names: self.covariate_names.clone(),
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = REQUIRED_COLUMNS[..8].iter().map(|s| s.to_string()).collect();
        header.extend(self.covariate_names.iter().map(|c| format!("{COVARIATE_PREFIX}{c}")));
        header.extend(["deaths".to_string(), "person_time".to_string()]);
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.block.clone(),
                r.year.to_string(),
                r.region.clone(),
                r.age_band.clone(),
                r.sex.clone(),
                r.dual.clone(),
                r.followup.clone(),
                r.exposure.to_string(),
            ];
            row.extend(r.covariates.iter().map(|v| v.to_string()));
            row.extend([r.deaths.to_string(), r.person_time.to_string()]);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn validate(r: &AggregatedRecord) -> std::result::Result<(), String> {
    if !(r.person_time > 0.0 && r.person_time.is_finite()) {
        return Err(format!("person_time must be positive, got {}", r.person_time));
    }
    if !(r.deaths >= 0.0 && r.deaths.is_finite()) {
        return Err(format!("deaths must be nonnegative, got {}", r.deaths));
    }
    if !(r.exposure >= 0.0 && r.exposure.is_finite()) {
        return Err(format!("exposure must be nonnegative, got {}", r.exposure));
    }
    if r.covariates.iter().any(|v| !v.is_finite()) {
        return Err("non-finite covariate".into());
    }
    Ok(())
}

/// Reads and validates records; malformed rows are reported with their
/// 1-based line number (the header is line 1).
pub fn ingest<R: Read>(reader: R) -> Result<RecordSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| ErcError::MissingColumn(name.into()));
    let idx: Vec<usize> = REQUIRED_COLUMNS.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let cov_idx: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix(COVARIATE_PREFIX).map(|name| (i, name.to_string())))
        .collect();

    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |message: String| ErcError::MalformedRow { line, message };
        let text = |i: usize| row.get(i).unwrap_or("").to_string();
        let num = |i: usize, name: &str| -> Result<f64> {
            let cell = row.get(i).unwrap_or("");
            cell.parse::<f64>().map_err(|_| bad(format!("column `{name}`: `{cell}` is not a number")))
        };
        let year_cell = text(idx[1]);
        let year = year_cell.parse::<i32>().map_err(|_| bad(format!("column `year`: `{year_cell}` is not an integer")))?;
        let record = AggregatedRecord {
            block: text(idx[0]),
            year,
            region: text(idx[2]),
            age_band: text(idx[3]),
            sex: text(idx[4]),
            dual: text(idx[5]),
            followup: text(idx[6]),
            exposure: num(idx[7], "exposure")?,
            covariates: cov_idx
                .iter()
                .map(|(i, name)| num(*i, &format!("{COVARIATE_PREFIX}{name}")))
                .collect::<Result<_>>()?,
            deaths: num(idx[8], "deaths")?,
            person_time: num(idx[9], "person_time")?,
        };
        validate(&record).map_err(bad)?;
        records.push(record);
    }
    Ok(RecordSet { covariate_names: cov_idx.into_iter().map(|(_, n)| n).collect(), records })
}
