//! Independent reference implementations used by the oracle and acceptance suites.
#![allow(dead_code)]

pub mod checks;

use erc_core::gps::GpsModel;
use nalgebra::{DMatrix, DVector};
use num::rational::BigRational;
use num::{ToPrimitive, Zero};
use rand::Rng;
use rand_distr::StandardNormal;

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite input")
}

/// Solves the weighted normal equations `X'WX b = X'Wy` in exact rational
/// arithmetic. `rows[i]` is the i-th design row.
pub fn exact_wls(rows: &[Vec<f64>], y: &[f64], w: &[f64]) -> Vec<f64> {
    let p = rows[0].len();
    let xs: Vec<Vec<BigRational>> = rows.iter().map(|r| r.iter().map(|&v| exact(v)).collect()).collect();
    let ys: Vec<BigRational> = y.iter().map(|&v| exact(v)).collect();
    let ws: Vec<BigRational> = w.iter().map(|&v| exact(v)).collect();
    // Augmented [X'WX | X'Wy].
    let mut a: Vec<Vec<BigRational>> = (0..p)
        .map(|j| {
            let mut row: Vec<BigRational> = (0..p)
                .map(|k| (0..xs.len()).fold(BigRational::zero(), |s, i| s + &ws[i] * &xs[i][j] * &xs[i][k]))
                .collect();
            row.push((0..xs.len()).fold(BigRational::zero(), |s, i| s + &ws[i] * &xs[i][j] * &ys[i]));
            row
        })
        .collect();
    for col in 0..p {
        let pivot = (col..p).find(|&r| !a[r][col].is_zero()).expect("singular system");
        a.swap(col, pivot);
        for r in 0..p {
            if r != col && !a[r][col].is_zero() {
                let f = &a[r][col] / &a[col][col];
                for k in col..=p {
                    let v = &f * &a[col][k];
                    a[r][k] -= v;
                }
            }
        }
    }
    (0..p).map(|j| (&a[j][p] / &a[j][j]).to_f64().unwrap()).collect()
}

fn standardize(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
    x.iter().map(|v| (v - m) / sd).collect()
}

/// Balance functions `g_i = (z_c, z_e, z_c * z_e)` built from scratch.
pub fn balance_functions(cov: &[Vec<f64>], e: &[f64]) -> Vec<Vec<f64>> {
    let ze = standardize(e);
    let zc: Vec<Vec<f64>> = cov.iter().map(|c| standardize(c)).collect();
    (0..e.len())
        .map(|i| {
            let mut g: Vec<f64> = zc.iter().map(|z| z[i]).collect();
            g.push(ze[i]);
            g.extend(zc.iter().map(|z| z[i] * ze[i]));
            g
        })
        .collect()
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    p.iter().zip(q).map(|(a, b)| if *a > 0.0 { (a / sp) * ((a / sp) / (b / sq)).ln() } else { 0.0 }).sum()
}

/// Primal entropy balancing by projected gradient on the probability simplex
/// slice `{p : sum p = 1, sum p_i g_i = 0}`. Returns `None` when the least-norm
/// starting point is not strictly positive.
pub fn primal_entropy(g: &[Vec<f64>], q: &[f64], iterations: usize) -> Option<Vec<f64>> {
    let n = g.len();
    let k = g[0].len() + 1;
    let a = DMatrix::from_fn(k, n, |r, i| if r == 0 { 1.0 } else { g[i][r - 1] });
    let mut b = DVector::zeros(k);
    b[0] = 1.0;
    let aat_inv = (&a * a.transpose()).try_inverse()?;
    let project = |v: &DVector<f64>| v - a.transpose() * (&aat_inv * (&a * v));
    let u = DVector::from_element(n, 1.0 / n as f64);
    let mut p = &u + a.transpose() * (&aat_inv * (&b - &a * &u));
    if p.iter().any(|&v| v <= 0.0) {
        return None;
    }
    let qs: f64 = q.iter().sum();
    let logq: Vec<f64> = q.iter().map(|v| (v / qs).ln()).collect();
    let f = |p: &DVector<f64>| p.iter().zip(&logq).map(|(pi, lq)| pi * (pi.ln() - lq)).sum::<f64>();
    let mut fp = f(&p);
    let mut step = 1.0 / n as f64;
    for _ in 0..iterations {
        let grad = DVector::from_fn(n, |i, _| p[i].ln() - logq[i] + 1.0);
        let d = project(&grad);
        let dd = d.norm_squared();
        if dd < 1e-30 {
            break;
        }
        step *= 2.0;
        loop {
            let trial = &p - &d * step;
            if trial.iter().all(|&v| v > 0.0) {
                let ft = f(&trial);
                if ft <= fp - 0.5 * step * dd {
                    p = trial;
                    fp = ft;
                    break;
                }
            }
            step *= 0.5;
            if step < 1e-300 {
                return Some(p.iter().copied().collect());
            }
        }
    }
    Some(p.iter().copied().collect())
}

/// `|corr_w(x, e)|` from weighted moments.
pub fn weighted_abs_corr(x: &[f64], e: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let me = e.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let (mut sxe, mut sxx, mut see) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        sxe += w[i] * (x[i] - mx) * (e[i] - me);
        sxx += w[i] * (x[i] - mx) * (x[i] - mx);
        see += w[i] * (e[i] - me) * (e[i] - me);
    }
    (sxe / (sxx * see).sqrt()).abs()
}

/// Exhaustive caliper match at level `w` with distances recomputed from the
/// GPS model's densities; lowest index wins ties. Returns the chosen unit and
/// its distance for each served unit.
pub fn brute_force_match(
    gps: &GpsModel,
    cov: &[Vec<f64>],
    e: &[f64],
    w: f64,
    caliper: f64,
    lambda: f64,
) -> Option<Vec<(usize, f64)>> {
    let n = e.len();
    let row = |i: usize| cov.iter().map(|c| c[i]).collect::<Vec<f64>>();
    let observed: Vec<f64> = (0..n).map(|i| gps.density(e[i], &row(i))).collect();
    let (pmin, pmax) = observed.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (emin, emax) = e.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let eligible: Vec<usize> = (0..n).filter(|&i| (e[i] - w).abs() <= caliper).collect();
    if eligible.is_empty() {
        return None;
    }
    let ws = (w - emin) / (emax - emin);
    Some(
        (0..n)
            .map(|j| {
                let a = (gps.density(w, &row(j)) - pmin) / (pmax - pmin);
                let mut best = (usize::MAX, f64::INFINITY);
                for &i in &eligible {
                    let d = lambda * (a - (observed[i] - pmin) / (pmax - pmin)).abs()
                        + (1.0 - lambda) * (ws - (e[i] - emin) / (emax - emin)).abs();
                    if d < best.1 {
                        best = (i, d);
                    }
                }
                best
            })
            .collect(),
    )
}

/// Small confounded sample: `p` standard-normal covariates and
/// `e = 10 + beta * c_1 + N(0, 1)`.
pub fn confounded_sample<R: Rng>(rng: &mut R, n: usize, p: usize, beta: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let cov: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let e = (0..n).map(|i| 10.0 + beta * cov[0][i] + rng.sample::<f64, _>(StandardNormal)).collect();
    (cov, e)
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

