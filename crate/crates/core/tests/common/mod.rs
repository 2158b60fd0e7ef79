#![allow(dead_code)]

use nalgebra::DMatrix;
use rtedmd_core::estimator::SnapshotArray;
use rtedmd_core::Dictionary;

/// Raw moments `E[X^n]`, `n = 0..=max`, of `N(mean, var)`.
pub fn gaussian_moments(mean: f64, var: f64, max: usize) -> Vec<f64> {
    let mut out = vec![0.0; max + 1];
    for (n, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        let mut k = 0;
        while k <= n {
            let double_fact: f64 = (1..k).step_by(2).map(|v| v as f64).product();
            s += binom(n, k) * mean.powi((n - k) as i32) * var.powi((k / 2) as i32) * double_fact;
            k += 2;
        }
        *o = s;
    }
    out
}

pub fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exact `E^x[X(t)^n]` for `dX = μX dt + σ dW`.
pub fn ou_moments(x: f64, t: f64, mu: f64, sigma: f64, max: usize) -> Vec<f64> {
    let mean = x * (mu * t).exp();
    let var = sigma * sigma / (-2.0 * mu) * (1.0 - (2.0 * mu * t).exp());
    gaussian_moments(mean, var, max)
}

/// Exact OU conditional means of a one-dimensional monomial dictionary on
/// the snapshot grid `k·dt`, `k = 0..=intervals`.
pub fn ou_exact_means(
    dict: &Dictionary,
    starts: &[f64],
    mu: f64,
    sigma: f64,
    dt: f64,
    intervals: usize,
) -> SnapshotArray {
    let max = dict.max_degree() as usize;
    SnapshotArray::from_fn(starts.len(), intervals + 1, dict.len(), |i, k, out| {
        let m = ou_moments(starts[i], k as f64 * dt, mu, sigma, max);
        for (o, e) in out.iter_mut().zip(dict.exponents()) {
            *o = m[e[0] as usize];
        }
    })
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

pub fn feature_rows(dict: &Dictionary, starts: &[f64]) -> DMatrix<f64> {
    let m = starts.len();
    DMatrix::from_fn(m, dict.len(), |i, n| {
        starts[i].powi(dict.exponents()[n][0] as i32)
    })
}
