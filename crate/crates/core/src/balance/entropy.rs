//! Entropy balancing weights for a continuous exposure.
//!
//! The primal problem
//!
//! ```text
//! min  sum w_i log(w_i / q_i)
//! s.t. sum w_i = n,  sum w_i g_i = 0
//! ```
//!
//! where `g_i` stacks the standardized covariates, the standardized exposure
//! and their products, is solved through its dual: the convex log-partition
//! `L(lambda) = log sum q_i exp(-lambda' g_i)` is minimized by damped Newton
//! steps, and `w_i = n q_i exp(-lambda' g_i) / sum_k q_k exp(-lambda' g_k)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::correlation::{weighted_abs_correlation, BalanceDiagnostics};
use crate::error::{ErcError, Result};
use crate::stats::quantile;

/// Quantile above which first-pass weights are clamped.
pub const TRUNCATION_QUANTILE: f64 = 0.995;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EntropyOptions {
    /// Stop when the largest absolute constraint residual drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Step shrink factor in the backtracking line search.
    pub backtrack: f64,
    /// Sufficient-decrease constant of the Armijo condition.
    pub armijo: f64,
    /// Also balance second moments of each covariate and the exposure.
    pub second_moments: bool,
}

impl Default for EntropyOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 200,
            backtrack: 0.5,
            armijo: 1e-4,
            second_moments: false,
        }
    }
}

/// Balance constraints evaluated per unit; every target is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceConstraintSet {
    /// `rows[i]` is `g_i`.
    rows: Vec<Vec<f64>>,
    labels: Vec<String>,
}

impl BalanceConstraintSet {
    /// Standardizes with unweighted sample moments, so rescaling or shifting a
    /// covariate leaves the constraints unchanged.
    pub fn new(covariates: &[Vec<f64>], exposure: &[f64], second_moments: bool) -> Result<Self> {
        let n = exposure.len();
        if covariates.iter().any(|c| c.len() != n) {
            return Err(ErcError::DimensionMismatch("covariates and exposure must align".into()));
        }
        let ze = standardize(exposure).ok_or(ErcError::DegenerateExposure)?;
        let zc: Vec<Vec<f64>> = covariates
            .iter()
            .enumerate()
            .map(|(j, c)| {
                standardize(c).ok_or_else(|| {
                    ErcError::InfeasibleConstraints(format!("covariate {} is constant", j + 1))
                })
            })
            .collect::<Result<_>>()?;

        let p = covariates.len();
        let mut labels: Vec<String> = (1..=p).map(|j| format!("mean(c{j})")).collect();
        labels.push("mean(e)".into());
        labels.extend((1..=p).map(|j| format!("mean(c{j}*e)")));
        if second_moments {
            labels.extend((1..=p).map(|j| format!("var(c{j})")));
            labels.push("var(e)".into());
        }

        let rows = (0..n)
            .map(|i| {
                let mut g = Vec::with_capacity(labels.len());
                g.extend(zc.iter().map(|z| z[i]));
                g.push(ze[i]);
                g.extend(zc.iter().map(|z| z[i] * ze[i]));
                if second_moments {
                    g.extend(zc.iter().map(|z| z[i] * z[i] - 1.0));
                    g.push(ze[i] * ze[i] - 1.0);
                }
                g
            })
            .collect();
        Ok(Self { rows, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// `sum_i w_i g_i / sum_i w_i` for each constraint.
    pub fn residuals(&self, weights: &[f64]) -> Vec<f64> {
        let total: f64 = weights.iter().sum();
        let mut out = vec![0.0; self.len()];
        for (g, &w) in self.rows.iter().zip(weights) {
            for (o, v) in out.iter_mut().zip(g) {
                *o += w * v;
            }
        }
        out.iter_mut().for_each(|v| *v /= total);
        out
    }
}

fn standardize(x: &[f64]) -> Option<Vec<f64>> {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
    if !(sd > 1e-12 * m.abs().max(1.0)) {
        return None;
    }
    Some(x.iter().map(|v| (v - m) / sd).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceWeights {
    /// Positive weights summing to `n`.
    pub weights: Vec<f64>,
    pub diagnostics: BalanceDiagnostics,
    pub iterations: usize,
    pub converged: bool,
    /// Largest absolute normalized constraint residual at the returned weights.
    pub constraint_residual: f64,
    /// Dual objective after each accepted step, starting at `lambda = 0`.
    pub objective_trace: Vec<f64>,
}

impl BalanceWeights {
    /// `sum w_i log(w_i / q_i)` with both vectors normalized to sum to one.
    pub fn relative_entropy(&self, base: &[f64]) -> f64 {
        relative_entropy(&self.weights, base)
    }
}

pub fn relative_entropy(weights: &[f64], base: &[f64]) -> f64 {
    let tw: f64 = weights.iter().sum();
    let tq: f64 = base.iter().sum();
    weights
        .iter()
        .zip(base)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, q)| {
            let pw = w / tw;
            pw * (pw / (q / tq)).ln()
        })
        .sum()
}

struct DualState {
    objective: f64,
    /// Normalized weights `p_i`.
    probs: Vec<f64>,
    /// `sum p_i g_i`.
    moments: DVector<f64>,
}

fn evaluate_dual(rows: &[Vec<f64>], log_base: &[f64], lambda: &DVector<f64>) -> DualState {
    let s: Vec<f64> = rows
        .iter()
        .zip(log_base)
        .map(|(g, lq)| lq - g.iter().zip(lambda.iter()).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let smax = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = s.iter().map(|v| (v - smax).exp()).sum();
    let objective = smax + sum.ln();
    let probs: Vec<f64> = s.iter().map(|v| (v - objective).exp()).collect();
    let k = lambda.len();
    let mut moments = DVector::zeros(k);
    for (g, &p) in rows.iter().zip(&probs) {
        for j in 0..k {
            moments[j] += p * g[j];
        }
    }
    DualState { objective, probs, moments }
}

fn newton_direction(rows: &[Vec<f64>], state: &DualState) -> DVector<f64> {
    let k = state.moments.len();
    let mut h = DMatrix::<f64>::zeros(k, k);
    for (g, &p) in rows.iter().zip(&state.probs) {
        if p == 0.0 {
            continue;
        }
        for a in 0..k {
            let pa = p * g[a];
            for b in a..k {
                h[(a, b)] += pa * g[b];
            }
        }
    }
    for a in 0..k {
        for b in a..k {
            h[(a, b)] -= state.moments[a] * state.moments[b];
            h[(b, a)] = h[(a, b)];
        }
    }
    // Gradient of L is -moments; the Newton step solves H d = moments.
    let rhs = state.moments.clone();
    let scale = (h.trace() / k as f64).max(f64::MIN_POSITIVE);
    let mut ridge = 0.0;
    loop {
        let mut hr = h.clone();
        for a in 0..k {
            hr[(a, a)] += ridge;
        }
        if let Some(chol) = hr.cholesky() {
            return chol.solve(&rhs);
        }
        ridge = if ridge == 0.0 { 1e-12 * scale } else { ridge * 10.0 };
        if ridge > scale {
            // Fall back to steepest descent.
            return rhs;
        }
    }
}

/// Entropy balancing weights relative to `base_weights`.
pub fn entropy_balance(
    covariates: &[Vec<f64>],
    exposure: &[f64],
    base_weights: &[f64],
    options: &EntropyOptions,
) -> Result<BalanceWeights> {
    let n = exposure.len();
    if base_weights.len() != n {
        return Err(ErcError::DimensionMismatch("base weights".into()));
    }
    if base_weights.iter().any(|q| !(*q > 0.0) || !q.is_finite()) {
        return Err(ErcError::InvalidArgument("base weights must be positive".into()));
    }
    let constraints = BalanceConstraintSet::new(covariates, exposure, options.second_moments)?;
    let k = constraints.len();
    if n <= k {
        return Err(ErcError::InvalidArgument(format!(
            "need more than {k} units for {k} balance constraints, got {n}"
        )));
    }

    let rows = constraints.rows();
    let total_q: f64 = base_weights.iter().sum();
    let log_base: Vec<f64> = base_weights.iter().map(|q| (q / total_q).ln()).collect();

    let mut lambda = DVector::zeros(k);
    let mut state = evaluate_dual(rows, &log_base, &lambda);
    let mut trace = vec![state.objective];
    let mut iterations = 0;
    let mut converged = state.moments.amax() < options.tolerance;

    while !converged && iterations < options.max_iterations {
        iterations += 1;
        let direction = newton_direction(rows, &state);
        // Directional derivative of L along +direction is -moments' direction.
        let slope = -state.moments.dot(&direction);
        if !(slope < 0.0) {
            break;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &lambda + &direction * step;
            let next = evaluate_dual(rows, &log_base, &trial);
            if next.objective.is_finite()
                && next.objective <= state.objective + options.armijo * step * slope
            {
                accepted = Some((trial, next));
                break;
            }
            step *= options.backtrack;
        }
        let Some((trial, next)) = accepted else { break };
        lambda = trial;
        state = next;
        trace.push(state.objective);
        converged = state.moments.amax() < options.tolerance;
    }

    let weights: Vec<f64> = state.probs.iter().map(|p| p * n as f64).collect();
    let diagnostics = weighted_abs_correlation(covariates, exposure, &weights)?;
    Ok(BalanceWeights {
        constraint_residual: state.moments.amax(),
        weights,
        diagnostics,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// Clamps every weight above the `q`-quantile of `weights` to that quantile.
pub fn clamp_upper_quantile(weights: &[f64], q: f64) -> Vec<f64> {
    let cap = quantile(weights, q);
    weights.iter().map(|&w| w.min(cap)).collect()
}

/// Second pass: clamp the first-pass weights at their 99.5th percentile,
/// renormalize to sum `n`, and rebalance with them as base weights.
pub fn truncate_and_rebalance(
    covariates: &[Vec<f64>],
    exposure: &[f64],
    first_pass: &BalanceWeights,
    options: &EntropyOptions,
) -> Result<BalanceWeights> {
    let n = first_pass.weights.len() as f64;
    let clamped = clamp_upper_quantile(&first_pass.weights, TRUNCATION_QUANTILE);
    let total: f64 = clamped.iter().sum();
    let base: Vec<f64> = clamped.iter().map(|w| w * n / total).collect();
    entropy_balance(covariates, exposure, &base, options)
}

/// Both passes with uniform initial base weights.
pub fn two_pass_entropy_weights(
    covariates: &[Vec<f64>],
    exposure: &[f64],
    options: &EntropyOptions,
) -> Result<(BalanceWeights, BalanceWeights)> {
    let first = entropy_balance(covariates, exposure, &vec![1.0; exposure.len()], options)?;
    let second = truncate_and_rebalance(covariates, exposure, &first, options)?;
    Ok((first, second))
}
