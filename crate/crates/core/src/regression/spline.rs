//! Cubic B-spline basis with quantile-placed interior knots.
//!
//! The full basis has `df + 1` functions that sum to one on the boundary
//! interval; the first is dropped so the basis can sit next to an intercept
//! column. Outside the boundary knots each function continues along its
//! tangent line at the nearest boundary.

use crate::error::{ErcError, Result};
use crate::stats::quantile_sorted;

const DEGREE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    /// Full knot vector: boundary knots repeated `DEGREE + 1` times.
    knots: Vec<f64>,
    df: usize,
}

impl SplineBasis {
    /// Interior knots at equally spaced quantiles of `e`, boundary knots at its range.
    pub fn from_data(e: &[f64], df: usize) -> Result<Self> {
        if df < DEGREE {
            return Err(ErcError::InvalidArgument(format!("spline df must be >= {DEGREE}")));
        }
        if e.is_empty() {
            return Err(ErcError::InvalidSampleSize(0));
        }
        let mut sorted = e.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
        if !(hi > lo) {
            return Err(ErcError::DegenerateExposure);
        }
        let n_interior = df - DEGREE;
        let interior: Vec<f64> = (1..=n_interior)
            .map(|k| quantile_sorted(&sorted, k as f64 / (n_interior + 1) as f64))
            .collect();
        Self::with_knots(lo, hi, &interior)
    }

    pub fn with_knots(lo: f64, hi: f64, interior: &[f64]) -> Result<Self> {
        if !(hi > lo) {
            return Err(ErcError::DegenerateExposure);
        }
        let mut prev = lo;
        for &k in interior {
            if !(k > prev && k < hi) {
                return Err(ErcError::InvalidArgument(format!(
                    "interior knot {k} not strictly increasing inside ({lo}, {hi})"
                )));
            }
            prev = k;
        }
        let mut knots = vec![lo; DEGREE + 1];
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat_n(hi, DEGREE + 1));
        Ok(Self { df: interior.len() + DEGREE, knots })
    }

    pub fn df(&self) -> usize {
        self.df
    }

    pub fn boundary(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.knots[DEGREE + 1..self.knots.len() - DEGREE - 1]
    }

    /// All `df + 1` basis functions at `x`.
    pub fn evaluate_full(&self, x: f64) -> Vec<f64> {
        let (lo, hi) = self.boundary();
        if x < lo {
            let (v, d) = self.value_and_slope(lo);
            v.iter().zip(&d).map(|(v, d)| v + (x - lo) * d).collect()
        } else if x > hi {
            let (v, d) = self.value_and_slope(hi);
            v.iter().zip(&d).map(|(v, d)| v + (x - hi) * d).collect()
        } else {
            self.values(x, DEGREE)
        }
    }

    /// The `df` design columns at `x` (first basis function dropped).
    pub fn evaluate(&self, x: f64) -> Vec<f64> {
        let mut full = self.evaluate_full(x);
        full.remove(0);
        full
    }

    /// Basis matrix, one row per entry of `e`.
    pub fn matrix(&self, e: &[f64]) -> Vec<Vec<f64>> {
        e.iter().map(|&x| self.evaluate(x)).collect()
    }

    fn value_and_slope(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let values = self.values(x, DEGREE);
        let lower = self.values(x, DEGREE - 1);
        let t = &self.knots;
        let nb = self.df + 1;
        let p = DEGREE as f64;
        let slope = (0..nb)
            .map(|i| {
                let left = denom_ratio(lower[i], t[i + DEGREE] - t[i]);
                let right = if i + 1 < lower.len() {
                    denom_ratio(lower[i + 1], t[i + DEGREE + 1] - t[i + 1])
                } else {
                    0.0
                };
                p * (left - right)
            })
            .collect();
        (values, slope)
    }

    /// Values of every B-spline of the given degree on this knot vector,
    /// for `x` inside the boundary interval. The vector has
    /// `knots.len() - degree - 1` entries.
    fn values(&self, x: f64, degree: usize) -> Vec<f64> {
        let t = &self.knots;
        let count = t.len() - degree - 1;
        let mut out = vec![0.0; count];
        // Span index s with t[s] <= x < t[s+1]; the right boundary belongs to the last span.
        let last_span = t.len() - DEGREE - 2;
        let span = if x >= t[last_span + 1] {
            last_span
        } else {
            t.partition_point(|&k| k <= x) - 1
        }
        .clamp(DEGREE, last_span);

        // Triangular Cox-de Boor recursion for the `degree + 1` nonzero functions.
        let mut n = vec![0.0; degree + 1];
        let mut left = vec![0.0; degree + 1];
        let mut right = vec![0.0; degree + 1];
        n[0] = 1.0;
        for j in 1..=degree {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        // Functions of the reduced degree live on the same knot vector, so
        // their indices are offset by the surplus boundary multiplicity.
        let offset = DEGREE - degree;
        for (r, v) in n.into_iter().enumerate() {
            let idx = span - DEGREE + r + offset;
            if idx < count {
                out[idx] = v;
            }
        }
        out
    }
}

fn denom_ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Basis columns for `e` with `df` columns and quantile knots from `e` itself.
pub fn spline_basis(e: &[f64], df: usize) -> Result<(SplineBasis, Vec<Vec<f64>>)> {
    let basis = SplineBasis::from_data(e, df)?;
    let rows = basis.matrix(e);
    Ok((basis, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // Textbook recursive definition, used as an independent check.
    fn cox_de_boor(t: &[f64], i: usize, k: usize, x: f64, hi: f64) -> f64 {
        if k == 0 {
            let last = t[i + 1] == hi && x == hi && t[i] < t[i + 1];
            return if (t[i] <= x && x < t[i + 1]) || last { 1.0 } else { 0.0 };
        }
        let a = if t[i + k] > t[i] { (x - t[i]) / (t[i + k] - t[i]) * cox_de_boor(t, i, k - 1, x, hi) } else { 0.0 };
        let b = if t[i + k + 1] > t[i + 1] {
            (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * cox_de_boor(t, i + 1, k - 1, x, hi)
        } else {
            0.0
        };
        a + b
    }

    #[test]
    fn matches_recursive_definition() {
        let b = SplineBasis::with_knots(0.0, 20.0, &[4.0, 11.0]).unwrap();
        for k in 0..=200 {
            let x = k as f64 * 0.1;
            let fast = b.evaluate_full(x);
            for (i, v) in fast.iter().enumerate() {
                assert_abs_diff_eq!(*v, cox_de_boor(&b.knots, i, DEGREE, x, 20.0), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn partition_of_unity_inside_boundary() {
        let e: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.7919).sin() * 10.0 + 10.0).collect();
        let b = SplineBasis::from_data(&e, 4).unwrap();
        let (lo, hi) = b.boundary();
        for k in 0..=500 {
            let x = lo + (hi - lo) * k as f64 / 500.0;
            let s: f64 = b.evaluate_full(x).iter().sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn df4_basis_has_full_rank() {
        let e: Vec<f64> = (0..1000).map(|i| 20.0 * i as f64 / 999.0).collect();
        let (b, rows) = spline_basis(&e, 4).unwrap();
        assert_eq!(b.df(), 4);
        assert_eq!(b.interior_knots().len(), 1);
        let m = nalgebra::DMatrix::from_fn(rows.len(), 4, |i, j| rows[i][j]);
        assert_eq!(m.rank(1e-9), 4);
    }

    #[test]
    fn extrapolation_is_linear_and_continuous() {
        let b = SplineBasis::with_knots(0.0, 10.0, &[5.0]).unwrap();
        let at = b.evaluate(10.0);
        let eps = b.evaluate(10.0 + 1e-7);
        for (a, c) in at.iter().zip(&eps) {
            assert!((a - c).abs() < 1e-5);
        }
        let f1 = b.evaluate(11.0);
        let f2 = b.evaluate(12.0);
        for j in 0..4 {
            assert_abs_diff_eq!(f2[j] - f1[j], f1[j] - at[j], epsilon = 1e-12);
        }
        // Slope at the boundary agrees with a one-sided finite difference.
        let inside = b.evaluate(10.0 - 1e-6);
        for j in 0..4 {
            let fd = (at[j] - inside[j]) / 1e-6;
            assert!((fd - (f1[j] - at[j])).abs() < 1e-4);
        }
    }

    #[test]
    fn degenerate_input_rejected() {
        assert!(matches!(SplineBasis::from_data(&[2.0; 10], 4), Err(ErcError::DegenerateExposure)));
        assert!(SplineBasis::from_data(&[], 4).is_err());
    }
}
