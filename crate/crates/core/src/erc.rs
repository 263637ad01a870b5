use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{ErcError, Result};

/// A fitted exposure-response curve on an ascending grid, with optional
/// pointwise bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErcEstimate {
    grid: Vec<f64>,
    values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    upper: Option<Vec<f64>>,
}

impl ErcEstimate {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.is_empty() {
            return Err(ErcError::EmptyGrid);
        }
        if grid.len() != values.len() {
            return Err(ErcError::DimensionMismatch(format!(
                "{} grid levels, {} values",
                grid.len(),
                values.len()
            )));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ErcError::InvalidArgument("grid must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ErcError::InvalidArgument("non-finite curve value".into()));
        }
        Ok(Self { grid, values, lower: None, upper: None })
    }

    pub fn with_bands(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != self.grid.len() || upper.len() != self.grid.len() {
            return Err(ErcError::DimensionMismatch("band length".into()));
        }
        let tol: f64 = 1e-12;
        for ((l, u), v) in lower.iter().zip(&upper).zip(&self.values) {
            if !(*l <= v + tol.max(v.abs() * tol) && *u >= v - tol.max(v.abs() * tol)) {
                return Err(ErcError::InvalidArgument(format!(
                    "band [{l}, {u}] does not bracket {v}"
                )));
            }
        }
        self.lower = Some(lower);
        self.upper = Some(upper);
        Ok(self)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lower(&self) -> Option<&[f64]> {
        self.lower.as_deref()
    }

    pub fn upper(&self) -> Option<&[f64]> {
        self.upper.as_deref()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Applies `f` to values and bands. `f` must be increasing.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = self.values.iter().map(|&v| f(v)).collect();
        let out = Self::new(self.grid.clone(), values)?;
        match (&self.lower, &self.upper) {
            (Some(l), Some(u)) => out.with_bands(
                l.iter().map(|&v| f(v)).collect(),
                u.iter().map(|&v| f(v)).collect(),
            ),
            _ => Ok(out),
        }
    }

    /// Linear interpolation of the curve at `e`.
    pub fn interpolate(&self, e: f64) -> Result<f64> {
        let lo = self.grid[0];
        let hi = *self.grid.last().unwrap();
        if !(lo..=hi).contains(&e) {
            return Err(ErcError::ReferenceOutOfRange { reference: e, lower: lo, upper: hi });
        }
        let k = self.grid.partition_point(|&g| g <= e);
        if k == 0 {
            return Ok(self.values[0]);
        }
        let k = k - 1;
        if self.grid[k] == e || k + 1 == self.grid.len() {
            return Ok(self.values[k]);
        }
        let t = (e - self.grid[k]) / (self.grid[k + 1] - self.grid[k]);
        Ok(self.values[k] + t * (self.values[k + 1] - self.values[k]))
    }

    /// Columns `exposure, estimate, lower, upper`; band cells are empty when absent.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["exposure", "estimate", "lower", "upper"])?;
        for i in 0..self.len() {
            let band = |b: &Option<Vec<f64>>| b.as_ref().map(|v| v[i].to_string()).unwrap_or_default();
            w.write_record([
                self.grid[i].to_string(),
                self.values[i].to_string(),
                band(&self.lower),
                band(&self.upper),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the layout written by [`ErcEstimate::write_csv`].
    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let (mut grid, mut values, mut lower, mut upper) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (k, row) in rdr.records().enumerate() {
            let row = row?;
            let num = |i: usize| -> Result<Option<f64>> {
                let cell = row.get(i).unwrap_or("").trim();
                if cell.is_empty() {
                    return Ok(None);
                }
                cell.parse().map(Some).map_err(|_| ErcError::MalformedRow {
                    line: k as u64 + 2,
                    message: format!("non-numeric value `{cell}`"),
                })
            };
            let required = |i: usize| {
                num(i)?.ok_or_else(|| ErcError::MalformedRow { line: k as u64 + 2, message: "missing value".into() })
            };
            grid.push(required(0)?);
            values.push(required(1)?);
            lower.push(num(2)?);
            upper.push(num(3)?);
        }
        let out = Self::new(grid, values)?;
        match (lower.iter().copied().collect::<Option<Vec<_>>>(), upper.iter().copied().collect::<Option<Vec<_>>>()) {
            (Some(l), Some(u)) if !l.is_empty() => out.with_bands(l, u),
            _ => Ok(out),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `m` equally spaced points from `lo` to `hi`, both included.
pub fn linspace(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    match m {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..m)
            .map(|k| {
                if k == m - 1 {
                    hi
                } else {
                    lo + (hi - lo) * k as f64 / (m - 1) as f64
                }
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_grids() {
        assert!(matches!(ErcEstimate::new(vec![], vec![]), Err(ErcError::EmptyGrid)));
        assert!(ErcEstimate::new(vec![1.0, 1.0], vec![0.0, 0.0]).is_err());
        assert!(ErcEstimate::new(vec![1.0, 2.0], vec![0.0]).is_err());
    }

    #[test]
    fn bands_must_bracket() {
        let e = ErcEstimate::new(vec![0.0, 1.0], vec![1.0, 2.0]).unwrap();
        assert!(e.clone().with_bands(vec![0.5, 2.5], vec![1.5, 3.0]).is_err());
        let e = e.with_bands(vec![0.5, 1.5], vec![1.5, 2.5]).unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "exposure,estimate,lower,upper\n0,1,0.5,1.5\n1,2,1.5,2.5\n"
        );
        let back: ErcEstimate = serde_json::from_str(&e.to_json().unwrap()).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn interpolation() {
        let e = ErcEstimate::new(vec![0.0, 10.0, 20.0], vec![0.0, 1.0, 3.0]).unwrap();
        assert_eq!(e.interpolate(5.0).unwrap(), 0.5);
        assert_eq!(e.interpolate(20.0).unwrap(), 3.0);
        assert_eq!(e.interpolate(10.0).unwrap(), 1.0);
        assert!(e.interpolate(20.5).is_err());
    }

    #[test]
    fn linspace_endpoints() {
        let g = linspace(0.0, 20.0, 100);
        assert_eq!(g.len(), 100);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[99], 20.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
