//! Weighted least squares by Householder QR of the row-scaled design.

use nalgebra::{DMatrix, DVector};

use crate::error::{ErcError, Result};

/// A column of `R` whose diagonal falls below this fraction of the
/// corresponding column norm is treated as collinear with earlier columns.
const RANK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    matrix: DMatrix<f64>,
    labels: Vec<String>,
}

impl DesignMatrix {
    pub fn new(matrix: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if labels.len() != matrix.ncols() {
            return Err(ErcError::DimensionMismatch(format!(
                "{} labels for {} columns",
                labels.len(),
                matrix.ncols()
            )));
        }
        Ok(Self { matrix, labels })
    }

    /// Builds a design from column vectors of equal length.
    pub fn from_columns(columns: &[(String, Vec<f64>)]) -> Result<Self> {
        let n = columns.first().map_or(0, |c| c.1.len());
        if columns.iter().any(|c| c.1.len() != n) {
            return Err(ErcError::DimensionMismatch("design columns differ in length".into()));
        }
        let matrix = DMatrix::from_fn(n, columns.len(), |i, j| columns[j].1[i]);
        Self::new(matrix, columns.iter().map(|c| c.0.clone()).collect())
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WlsFit {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `sum w_i r_i^2`.
    pub weighted_sse: f64,
    /// Weighted SSE over (positive-weight rows - p).
    pub residual_variance: f64,
}

/// Minimizes `sum w_i (y_i - x_i' beta)^2`. Rows with zero weight are ignored.
pub fn wls_fit(x: &DesignMatrix, y: &[f64], w: &[f64]) -> Result<WlsFit> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n || w.len() != n {
        return Err(ErcError::DimensionMismatch(format!(
            "design has {n} rows, outcome {}, weights {}",
            y.len(),
            w.len()
        )));
    }
    if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(ErcError::InvalidArgument("weights must be finite and nonnegative".into()));
    }
    let rows: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
    if rows.is_empty() {
        return Err(ErcError::ZeroWeights);
    }
    if p == 0 || rows.len() < p {
        return Err(ErcError::RankDeficient { columns: x.labels.clone() });
    }

    let m = &x.matrix;
    let a = DMatrix::from_fn(rows.len(), p, |r, j| w[rows[r]].sqrt() * m[(rows[r], j)]);
    let b = DVector::from_fn(rows.len(), |r, _| w[rows[r]].sqrt() * y[rows[r]]);

    let col_norms: Vec<f64> = (0..p).map(|j| a.column(j).norm()).collect();
    let qr = a.qr();
    let r = qr.r();
    let collinear: Vec<String> = (0..p)
        .filter(|&j| col_norms[j] == 0.0 || r[(j, j)].abs() <= RANK_TOLERANCE * col_norms[j])
        .map(|j| x.labels[j].clone())
        .collect();
    if !collinear.is_empty() {
        return Err(ErcError::RankDeficient { columns: collinear });
    }

    let qtb = qr.q().transpose() * &b;
    let beta = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| ErcError::RankDeficient { columns: x.labels.clone() })?;

    let fitted = m * &beta;
    let residuals: Vec<f64> = (0..n).map(|i| y[i] - fitted[i]).collect();
    let weighted_sse: f64 = rows.iter().map(|&i| w[i] * residuals[i] * residuals[i]).sum();
    let dof = rows.len() as f64 - p as f64;
    let residual_variance = if dof > 0.0 { weighted_sse / dof } else { 0.0 };

    // diag((R'R)^-1) is the squared row norms of R^-1.
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| ErcError::RankDeficient { columns: x.labels.clone() })?;
    let std_errors = (0..p)
        .map(|j| (residual_variance * r_inv.row(j).norm_squared()).sqrt())
        .collect();

    Ok(WlsFit {
        coefficients: beta.iter().copied().collect(),
        std_errors,
        residuals,
        weighted_sse,
        residual_variance,
    })
}
