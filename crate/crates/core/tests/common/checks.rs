//! Oracle comparisons returning the worst discrepancy seen, shared by the
//! oracle suite and the acceptance runner.

use erc_core::balance::{entropy_balance, relative_entropy, EntropyOptions};
use erc_core::gps::{fit_gps, BoostParams, MatchingContext};
use erc_core::regression::{wls_fit, DesignMatrix};
use erc_core::seed::rng_from_seed;
use rand::Rng;

use super::*;

/// Largest relative coefficient gap between QR WLS and exact normal equations.
pub fn wls_gap(seeds: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = rng_from_seed(seed);
        let (n, p) = (40 + 5 * seed as usize, 2 + seed as usize % 4);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut r = vec![1.0];
                r.extend((1..p).map(|_| rng.random_range(-3.0..3.0)));
                r
            })
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| r.iter().sum::<f64>() + rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..5.0)).collect();
        let cols: Vec<(String, Vec<f64>)> =
            (0..p).map(|j| (format!("x{j}"), rows.iter().map(|r| r[j]).collect())).collect();
        let fit = wls_fit(&DesignMatrix::from_columns(&cols).unwrap(), &y, &w).unwrap();
        for (a, b) in fit.coefficients.iter().zip(exact_wls(&rows, &y, &w)) {
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
        }
    }
    worst
}

/// Largest |KL(dual) - KL(primal)| and the number of instances compared.
pub fn entropy_primal_gap(seeds: u64) -> (f64, usize) {
    let (mut worst, mut checked) = (0.0f64, 0);
    for seed in 0..seeds {
        let mut rng = rng_from_seed(100 + seed);
        let n = rng.random_range(30..=50);
        let (cov, e) = confounded_sample(&mut rng, n, 2, 0.15);
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let dual = entropy_balance(&cov, &e, &q, &EntropyOptions::default()).unwrap();
        if !dual.converged {
            return (f64::INFINITY, checked);
        }
        let Some(primal) = primal_entropy(&balance_functions(&cov, &e), &q, 20_000) else { continue };
        worst = worst.max((relative_entropy(&dual.weights, &q) - kl(&primal, &q)).abs());
        checked += 1;
    }
    (worst, checked)
}

/// Number of (level, unit) assignments that differ from the exhaustive scan
/// by more than a 1e-12 distance tie, and the number compared.
pub fn matching_mismatches(lambda: f64, seed: u64) -> (usize, usize) {
    let mut rng = rng_from_seed(seed);
    let (cov, e) = confounded_sample(&mut rng, 80, 3, 0.8);
    let gps = fit_gps(&cov, &e, &BoostParams { n_trees: 30, ..Default::default() }).unwrap();
    let caliper = 0.6;
    let ctx = MatchingContext::new(&cov, &e, &gps, caliper, lambda).unwrap();
    let (lo, hi) = e.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (mut bad, mut total) = (0, 0);
    for k in 0..25 {
        let w = lo + (hi - lo) * k as f64 / 24.0;
        match (ctx.match_level(w), brute_force_match(&gps, &cov, &e, w, caliper, lambda)) {
            (Some(fast), Some(brute)) => {
                for (j, (&i, &(bi, bd))) in fast.iter().zip(&brute).enumerate() {
                    total += 1;
                    if i != bi && (ctx.distance(w, j, i) - bd).abs() >= 1e-12 {
                        bad += 1;
                    }
                }
            }
            (None, None) => {}
            _ => bad += 1,
        }
    }
    (bad, total)
}

pub struct ExactnessReport {
    pub converged: usize,
    pub max_residual: f64,
    pub max_corr: f64,
}

/// First-pass entropy solves on `instances` random confounded samples, checked
/// with balance functions and correlations computed from scratch.
pub fn entropy_exactness(instances: u64) -> ExactnessReport {
    let mut r = ExactnessReport { converged: 0, max_residual: 0.0, max_corr: 0.0 };
    for seed in 0..instances {
        let mut rng = rng_from_seed(1_000 + seed);
        let n = rng.random_range(100..=400);
        let p = rng.random_range(1..=5);
        let beta = rng.random_range(0.0..1.5);
        let (cov, e) = confounded_sample(&mut rng, n, p, beta);
        let bw = entropy_balance(&cov, &e, &vec![1.0; n], &EntropyOptions::default()).unwrap();
        if !bw.converged {
            continue;
        }
        r.converged += 1;
        let g = balance_functions(&cov, &e);
        let total: f64 = bw.weights.iter().sum();
        let residual: Vec<f64> = (0..g[0].len())
            .map(|k| g.iter().zip(&bw.weights).map(|(gi, w)| w * gi[k]).sum::<f64>() / total)
            .collect();
        r.max_residual = r.max_residual.max(max_abs(&residual));
        for c in &cov {
            r.max_corr = r.max_corr.max(weighted_abs_corr(c, &e, &bw.weights));
        }
    }
    r
}
