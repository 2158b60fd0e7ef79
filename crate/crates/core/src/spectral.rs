//! Eigenvalues and eigenfunctions of generator matrices, and eigenvalue
//! matching against a reference spectrum.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::generator::GeneratorMatrix;
use crate::linalg::{eigen_decompose, spectral_order};

#[derive(Debug, Clone)]
pub struct SpectrumResult {
    /// Sorted by real part descending, then imaginary part ascending.
    pub eigenvalues: Vec<Complex64>,
    /// Column `i` holds the dictionary coefficients `φ_i` of eigenvalue `i`.
    pub eigenvectors: DMatrix<Complex64>,
    pub matching: Option<Vec<(usize, usize)>>,
    pub mae: Option<f64>,
}

pub fn eigendecompose(l: &GeneratorMatrix) -> Result<SpectrumResult> {
    let eig = eigen_decompose(l.entries())?;
    Ok(SpectrumResult {
        eigenvalues: eig.values,
        eigenvectors: eig.vectors,
        matching: None,
        mae: None,
    })
}

impl SpectrumResult {
    /// Matches `reference` against the estimated eigenvalues and stores the result.
    pub fn score(
        &mut self,
        reference: &[Complex64],
        n_match: usize,
        strategy: MatchStrategy,
    ) -> Result<f64> {
        let m = match_and_mae(reference, &self.eigenvalues, n_match, strategy)?;
        self.matching = Some(m.pairs);
        self.mae = Some(m.mae);
        Ok(m.mae)
    }

    /// Largest `‖Lφ − βφ‖ / ‖L‖` over all eigenpairs.
    pub fn max_residual(&self, l: &DMatrix<f64>) -> f64 {
        let lc = l.map(|v| Complex64::new(v, 0.0));
        let scale = l.norm().max(f64::MIN_POSITIVE);
        (0..self.eigenvalues.len())
            .map(|k| {
                let v = self.eigenvectors.column(k);
                (&lc * v - v * self.eigenvalues[k]).norm() / scale
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatchStrategy {
    /// Each reference eigenvalue, in sorted order, takes the nearest unused estimate.
    #[default]
    Greedy,
    /// Minimum total distance assignment.
    Optimal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `(reference_index, estimate_index)`, indices into the sorted lists.
    pub pairs: Vec<(usize, usize)>,
    pub mae: f64,
}

/// Largest reference set the optimal assignment accepts.
const MAX_OPTIMAL: usize = 20;

/// Pairs the first `n_match` sorted reference eigenvalues with estimates and
/// returns the mean absolute difference over the pairs.
pub fn match_and_mae(
    reference: &[Complex64],
    estimated: &[Complex64],
    n_match: usize,
    strategy: MatchStrategy,
) -> Result<Matching> {
    if n_match == 0 || n_match > reference.len() || n_match > estimated.len() {
        return Err(Error::Config(format!(
            "cannot match {n_match} eigenvalues between lists of length {} and {}",
            reference.len(),
            estimated.len()
        )));
    }
    let mut truth: Vec<Complex64> = reference.to_vec();
    truth.sort_by(spectral_order);
    truth.truncate(n_match);
    let mut est: Vec<Complex64> = estimated.to_vec();
    est.sort_by(spectral_order);

    let pairs = match strategy {
        MatchStrategy::Greedy => {
            let mut used = vec![false; est.len()];
            truth
                .iter()
                .enumerate()
                .map(|(t, a)| {
                    let mut best = usize::MAX;
                    let mut best_d = f64::INFINITY;
                    for (e, b) in est.iter().enumerate() {
                        let d = (a - b).norm();
                        if !used[e] && d < best_d {
                            best = e;
                            best_d = d;
                        }
                    }
                    used[best] = true;
                    (t, best)
                })
                .collect()
        }
        MatchStrategy::Optimal => {
            if n_match > MAX_OPTIMAL {
                return Err(Error::Config(format!(
                    "optimal matching supports at most {MAX_OPTIMAL} reference eigenvalues"
                )));
            }
            optimal_assignment(&truth, &est)
        }
    };
    let mae = pairs
        .iter()
        .map(|&(t, e)| (truth[t] - est[e]).norm())
        .sum::<f64>()
        / n_match as f64;
    Ok(Matching { pairs, mae })
}

/// Exact minimum-cost assignment by DP over subsets of the reference set.
fn optimal_assignment(truth: &[Complex64], est: &[Complex64]) -> Vec<(usize, usize)> {
    let n = truth.len();
    let full = (1usize << n) - 1;
    // cost[e][mask]: best total using estimates 0..e with reference subset `mask` matched
    let mut cost = vec![vec![f64::INFINITY; full + 1]; est.len() + 1];
    cost[0][0] = 0.0;
    for e in 0..est.len() {
        for mask in 0..=full {
            let c = cost[e][mask];
            if !c.is_finite() {
                continue;
            }
            if c < cost[e + 1][mask] {
                cost[e + 1][mask] = c;
            }
            for t in 0..n {
                if mask & (1 << t) == 0 {
                    let next = mask | (1 << t);
                    let v = c + (truth[t] - est[e]).norm();
                    if v < cost[e + 1][next] {
                        cost[e + 1][next] = v;
                    }
                }
            }
        }
    }
    let mut pairs = Vec::with_capacity(n);
    let mut mask = full;
    for e in (0..est.len()).rev() {
        if cost[e][mask] == cost[e + 1][mask] {
            continue;
        }
        let t = (0..n)
            .filter(|t| mask & (1 << t) != 0)
            .find(|&t| cost[e][mask ^ (1 << t)] + (truth[t] - est[e]).norm() == cost[e + 1][mask])
            .expect("backtrack follows a recorded transition");
        pairs.push((t, e));
        mask ^= 1 << t;
    }
    pairs.sort_unstable();
    pairs
}

/// `Z_N(x_p) · φ_i` for every point and eigenvector.
pub fn eigenfunction_values(
    result: &SpectrumResult,
    dict: &Dictionary,
    points: &[Vec<f64>],
) -> Result<DMatrix<Complex64>> {
    if result.eigenvectors.nrows() != dict.len() {
        return Err(Error::DimensionMismatch {
            expected: dict.len(),
            got: result.eigenvectors.nrows(),
        });
    }
    let mut out = DMatrix::zeros(points.len(), result.eigenvectors.ncols());
    for (p, x) in points.iter().enumerate() {
        let z = dict.evaluate(x)?.map(|v| Complex64::new(v, 0.0));
        out.set_row(p, &(z.transpose() * &result.eigenvectors));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::Provenance;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn mae_examples() {
        let m = match_and_mae(
            &[c(-0.5, 0.0), c(-1.0, 0.0)],
            &[c(-0.49, 0.0), c(-1.02, 0.0)],
            2,
            MatchStrategy::Greedy,
        )
        .unwrap();
        assert_abs_diff_eq!(m.mae, 0.015, epsilon = 1e-15);
        let pair = [c(-0.02509, 0.86363), c(-0.02509, -0.86363)];
        let m = match_and_mae(&pair, &pair, 2, MatchStrategy::Greedy).unwrap();
        assert_eq!(m.mae, 0.0);
    }

    #[test]
    fn optimal_beats_greedy_when_greedy_is_myopic() {
        let truth = [c(0.0, 0.0), c(-1.0, 0.0)];
        let est = [c(-0.6, 0.0), c(1.0, 0.0)];
        let g = match_and_mae(&truth, &est, 2, MatchStrategy::Greedy).unwrap();
        let o = match_and_mae(&truth, &est, 2, MatchStrategy::Optimal).unwrap();
        assert_abs_diff_eq!(g.mae, (0.6 + 2.0) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(o.mae, (1.0 + 0.4) / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn too_many_requested() {
        assert!(match_and_mae(&[c(1.0, 0.0)], &[c(1.0, 0.0)], 2, MatchStrategy::Greedy).is_err());
    }

    #[test]
    fn eigenfunction_of_unit_vector() {
        let dict = Dictionary::monomials_up_to_degree(1, 2, false);
        let l = GeneratorMatrix::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]),
            dict.clone(),
            Provenance::Analytic,
        )
        .unwrap();
        let s = eigendecompose(&l).unwrap();
        assert_eq!(s.eigenvalues, vec![c(-1.0, 0.0), c(-2.0, 0.0)]);
        let v = eigenfunction_values(&s, &dict, &[vec![3.0], vec![0.0]]).unwrap();
        assert_abs_diff_eq!(v[(0, 1)].re, 9.0, epsilon = 1e-14);
        assert!(v.row(1).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn rotation_spectrum() {
        let dict = Dictionary::monomials_up_to_degree(2, 1, false);
        let l = GeneratorMatrix::new(
            DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]),
            dict,
            Provenance::Analytic,
        )
        .unwrap();
        let s = eigendecompose(&l).unwrap();
        assert_abs_diff_eq!(s.eigenvalues[0].im, -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.eigenvalues[1].im, 1.0, epsilon = 1e-14);
        assert!(s.max_residual(l.entries()) < 1e-8);
    }
}
