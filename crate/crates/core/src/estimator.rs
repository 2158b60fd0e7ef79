//! Resolvent-based generator estimation.
//!
//! The Laplace transform `λ²∫₀ᵀ e^{−λt} E[z(X(t∧τ))] dt` is estimated on the
//! observation grid with the trapezoidal rule, and the Yosida-type labels
//! `Y = I_λ − λX` are regressed on the dictionary features of the initial
//! states.

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::generator::{GeneratorMatrix, Provenance};
use crate::linalg::{lstsq, PINV_RTOL};
use crate::sde::{intervals_for, TrajectoryEnsemble};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtConfig {
    pub lambda: f64,
    /// Resolvent parameter of the data integral for the modified estimator.
    #[serde(default)]
    pub mu: Option<f64>,
    pub horizon: f64,
    #[serde(default)]
    pub use_modification: bool,
}

impl RtConfig {
    pub fn plain(lambda: f64, horizon: f64) -> Self {
        Self {
            lambda,
            mu: None,
            horizon,
            use_modification: false,
        }
    }

    pub fn modified(lambda: f64, mu: f64, horizon: f64) -> Self {
        Self {
            lambda,
            mu: Some(mu),
            horizon,
            use_modification: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if self.use_modification {
            match self.mu {
                Some(mu) if mu > 0.0 && mu < self.lambda => {}
                Some(mu) => {
                    return Err(Error::Config(format!(
                        "modified estimator needs 0 < mu < lambda, got mu={mu}, lambda={}",
                        self.lambda
                    )))
                }
                None => return Err(Error::Config("modified estimator needs mu".into())),
            }
        }
        Ok(())
    }

    /// `e^{−λT}`, the weight of the discarded tail of the Laplace integral.
    pub fn truncation_weight(&self) -> f64 {
        (-self.lambda * self.horizon).exp()
    }

    /// Laplace parameter used for the data integral.
    pub fn data_parameter(&self) -> f64 {
        if self.use_modification {
            self.mu.unwrap_or(self.lambda)
        } else {
            self.lambda
        }
    }

    pub fn provenance(&self) -> Provenance {
        if self.use_modification {
            Provenance::RtEdmdModified {
                lambda: self.lambda,
                mu: self.mu.unwrap_or(f64::NAN),
                horizon: self.horizon,
            }
        } else {
            Provenance::RtEdmd {
                lambda: self.lambda,
                horizon: self.horizon,
            }
        }
    }
}

/// Dense `m × (Γ+1) × N` array of per-snapshot observable values.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotArray {
    m: usize,
    snapshots: usize,
    n: usize,
    data: Vec<f64>,
}

impl SnapshotArray {
    pub fn zeros(m: usize, snapshots: usize, n: usize) -> Self {
        Self {
            m,
            snapshots,
            n,
            data: vec![0.0; m * snapshots * n],
        }
    }

    /// Builds the array from `f(i, k, out)` filling the `N` values at `(i, k)`.
    pub fn from_fn(
        m: usize,
        snapshots: usize,
        n: usize,
        mut f: impl FnMut(usize, usize, &mut [f64]),
    ) -> Self {
        let mut a = Self::zeros(m, snapshots, n);
        for i in 0..m {
            for k in 0..snapshots {
                let o = (i * snapshots + k) * n;
                f(i, k, &mut a.data[o..o + n]);
            }
        }
        a
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.m, self.snapshots, self.n)
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize, n: usize) -> f64 {
        self.data[(i * self.snapshots + k) * self.n + n]
    }

    #[inline]
    pub fn row(&self, i: usize, k: usize) -> &[f64] {
        let o = (i * self.snapshots + k) * self.n;
        &self.data[o..o + self.n]
    }

    /// Values of observable `n` at initial state `i` over all snapshots.
    pub fn series(&self, i: usize, n: usize) -> Vec<f64> {
        (0..self.snapshots).map(|k| self.get(i, k, n)).collect()
    }
}

fn check_dims(ensemble: &TrajectoryEnsemble, dict: &Dictionary) -> Result<()> {
    if ensemble.dim() != dict.dim() {
        return Err(Error::DimensionMismatch {
            expected: dict.dim(),
            got: ensemble.dim(),
        });
    }
    Ok(())
}

/// `(1/J) Σ_j Z_N(X_{i,j}(t_k ∧ τ))` for every initial state and snapshot.
pub fn mean_observables(ensemble: &TrajectoryEnsemble, dict: &Dictionary) -> Result<SnapshotArray> {
    check_dims(ensemble, dict)?;
    let (m, j_count, snaps, n) = (
        ensemble.num_initial(),
        ensemble.paths_per_state(),
        ensemble.snapshots(),
        dict.len(),
    );
    let blocks: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![0.0; snaps * n];
            let mut z = vec![0.0; n];
            for j in 0..j_count {
                for k in 0..snaps {
                    dict.evaluate_into(ensemble.state(i, j, k), &mut z);
                    for (a, v) in acc[k * n..(k + 1) * n].iter_mut().zip(&z) {
                        *a += v;
                    }
                }
            }
            let inv = 1.0 / j_count as f64;
            acc.iter_mut().for_each(|a| *a *= inv);
            acc
        })
        .collect();
    Ok(SnapshotArray {
        m,
        snapshots: snaps,
        n,
        data: blocks.concat(),
    })
}

/// Conditional means over the paths that have not left the domain by `t_k`.
///
/// Snapshots where every path has exited get zero. Returns the array and the
/// number of such empty cells.
pub fn filtered_mean_observables(
    ensemble: &TrajectoryEnsemble,
    dict: &Dictionary,
) -> Result<(SnapshotArray, usize)> {
    check_dims(ensemble, dict)?;
    let (m, j_count, snaps, n) = (
        ensemble.num_initial(),
        ensemble.paths_per_state(),
        ensemble.snapshots(),
        dict.len(),
    );
    let blocks: Vec<(Vec<f64>, usize)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![0.0; snaps * n];
            let mut count = vec![0usize; snaps];
            let mut z = vec![0.0; n];
            for j in 0..j_count {
                for k in 0..snaps {
                    if !ensemble.alive_at(i, j, k) {
                        break;
                    }
                    dict.evaluate_into(ensemble.state(i, j, k), &mut z);
                    for (a, v) in acc[k * n..(k + 1) * n].iter_mut().zip(&z) {
                        *a += v;
                    }
                    count[k] += 1;
                }
            }
            let mut empty = 0;
            for k in 0..snaps {
                if count[k] == 0 {
                    empty += 1;
                    continue;
                }
                let inv = 1.0 / count[k] as f64;
                acc[k * n..(k + 1) * n].iter_mut().for_each(|a| *a *= inv);
            }
            (acc, empty)
        })
        .collect();
    let empty = blocks.iter().map(|b| b.1).sum();
    Ok((
        SnapshotArray {
            m,
            snapshots: snaps,
            n,
            data: blocks.into_iter().flat_map(|b| b.0).collect(),
        },
        empty,
    ))
}

/// `U[i][k][n] = λ² e^{−λ t_k} means[i][k][n]` with `t_k = k·dt`.
pub fn integrand_matrix(means: &SnapshotArray, lambda: f64, dt: f64) -> SnapshotArray {
    let weights: Vec<f64> = (0..means.snapshots)
        .map(|k| lambda * lambda * (-lambda * k as f64 * dt).exp())
        .collect();
    let mut out = means.clone();
    for i in 0..means.m {
        for (k, w) in weights.iter().enumerate() {
            let o = (i * means.snapshots + k) * means.n;
            out.data[o..o + means.n].iter_mut().for_each(|v| *v *= w);
        }
    }
    out
}

/// Composite trapezoidal rule on a uniform grid.
pub fn trapezoid_integrate(samples: &[f64], dt: f64) -> f64 {
    match samples.len() {
        0 | 1 => 0.0,
        len => {
            let inner: f64 = samples[1..len - 1].iter().sum();
            dt * (0.5 * samples[0] + inner + 0.5 * samples[len - 1])
        }
    }
}

/// `I_λ[i][n] = 𝒯(U_i[:, n])` over the first `intervals + 1` snapshots.
pub fn resolvent_integral(
    means: &SnapshotArray,
    lambda: f64,
    dt: f64,
    intervals: usize,
) -> DMatrix<f64> {
    let u = integrand_matrix(means, lambda, dt);
    let snaps = intervals + 1;
    DMatrix::from_fn(means.m, means.n, |i, n| {
        let series: Vec<f64> = (0..snaps).map(|k| u.get(i, k, n)).collect();
        trapezoid_integrate(&series, dt)
    })
}

/// Feature matrix `X` with row `i = Z_N(x_i)`.
pub fn feature_matrix(dict: &Dictionary, states: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let mut x = DMatrix::zeros(states.len(), dict.len());
    for (i, s) in states.iter().enumerate() {
        x.set_row(i, &dict.evaluate(s)?.transpose());
    }
    Ok(x)
}

/// Regression data of the resolvent estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct RtMatrices {
    pub x: DMatrix<f64>,
    pub i_lambda: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

fn horizon_intervals(ensemble: &TrajectoryEnsemble, horizon: f64) -> Result<usize> {
    let k = intervals_for(ensemble.config().rate, horizon)?;
    if k > ensemble.intervals() {
        return Err(Error::Config(format!(
            "estimator horizon {horizon} exceeds the simulated window {}",
            ensemble.config().horizon
        )));
    }
    Ok(k)
}

/// `X`, `I_λ` and `Y_λ = I_λ − λX` from explicit means.
pub fn matrices_from_means(
    x: DMatrix<f64>,
    means: &SnapshotArray,
    lambda: f64,
    dt: f64,
    intervals: usize,
) -> RtMatrices {
    let i_lambda = resolvent_integral(means, lambda, dt, intervals);
    let y = &i_lambda - &x * lambda;
    RtMatrices { x, i_lambda, y }
}

pub fn build_matrices(
    ensemble: &TrajectoryEnsemble,
    dict: &Dictionary,
    rt: &RtConfig,
) -> Result<RtMatrices> {
    rt.validate()?;
    let intervals = horizon_intervals(ensemble, rt.horizon)?;
    let means = mean_observables(ensemble, dict)?;
    let x = feature_matrix(dict, ensemble.initial_states())?;
    Ok(matrices_from_means(
        x,
        &means,
        rt.lambda,
        ensemble.config().observation_step(),
        intervals,
    ))
}

/// Least-squares generator `L = argmin ‖Y − XA‖_F`.
pub fn fit_generator(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    dict: &Dictionary,
    provenance: Provenance,
) -> Result<GeneratorMatrix> {
    if x.ncols() != dict.len() || y.ncols() != dict.len() {
        return Err(Error::DimensionMismatch {
            expected: dict.len(),
            got: if x.ncols() != dict.len() {
                x.ncols()
            } else {
                y.ncols()
            },
        });
    }
    if x.nrows() < x.ncols() {
        warn!(
            "{} initial states for {} observables; using the minimum-norm solution",
            x.nrows(),
            x.ncols()
        );
    }
    let (l, info) = lstsq(x, y, PINV_RTOL)?;
    if !info.full_rank(x.ncols()) {
        warn!(
            "feature matrix has rank {} < {}; minimum-norm solution",
            info.rank,
            x.ncols()
        );
    }
    GeneratorMatrix::new(l, dict.clone(), provenance)
}

/// `L_mod = A†B` with `A = ((λ−μ)/μ²) I_μ + X`, `B = (λ/μ) I_μ − λX`.
pub fn fit_modified_from_parts(
    x: &DMatrix<f64>,
    i_mu: &DMatrix<f64>,
    lambda: f64,
    mu: f64,
    dict: &Dictionary,
    provenance: Provenance,
) -> Result<GeneratorMatrix> {
    if !(mu > 0.0 && mu < lambda) {
        return Err(Error::Config(format!(
            "modified estimator needs 0 < mu < lambda, got mu={mu}, lambda={lambda}"
        )));
    }
    let a = i_mu * ((lambda - mu) / (mu * mu)) + x;
    let b = i_mu * (lambda / mu) - x * lambda;
    let (l, info) = lstsq(&a, &b, PINV_RTOL)?;
    if !info.full_rank(a.ncols()) {
        return Err(Error::IllConditioned {
            condition: info.condition(),
            context: format!(
                "resolvent-identity system has numerical rank {} < {}",
                info.rank,
                a.ncols()
            ),
        });
    }
    GeneratorMatrix::new(l, dict.clone(), provenance)
}

pub fn fit_generator_modified(
    ensemble: &TrajectoryEnsemble,
    dict: &Dictionary,
    rt: &RtConfig,
) -> Result<GeneratorMatrix> {
    let mut rt = rt.clone();
    rt.use_modification = true;
    rt.validate()?;
    let mu = rt.mu.expect("validated");
    let intervals = horizon_intervals(ensemble, rt.horizon)?;
    let means = mean_observables(ensemble, dict)?;
    let x = feature_matrix(dict, ensemble.initial_states())?;
    let i_mu = resolvent_integral(&means, mu, ensemble.config().observation_step(), intervals);
    fit_modified_from_parts(&x, &i_mu, rt.lambda, mu, dict, rt.provenance())
}

/// Plain or modified estimator depending on `rt.use_modification`.
pub fn estimate_rt(
    ensemble: &TrajectoryEnsemble,
    dict: &Dictionary,
    rt: &RtConfig,
) -> Result<GeneratorMatrix> {
    if rt.use_modification {
        return fit_generator_modified(ensemble, dict, rt);
    }
    let mats = build_matrices(ensemble, dict, rt)?;
    fit_generator(&mats.x, &mats.y, dict, rt.provenance())
}

/// Resolvent estimator built from the conditional means of paths that are
/// still inside the domain, ignoring the stopped values.
pub fn estimate_rt_filtered(
    ensemble: &TrajectoryEnsemble,
    dict: &Dictionary,
    lambda: f64,
    horizon: f64,
) -> Result<GeneratorMatrix> {
    RtConfig::plain(lambda, horizon).validate()?;
    let intervals = horizon_intervals(ensemble, horizon)?;
    let (means, empty) = filtered_mean_observables(ensemble, dict)?;
    if empty > 0 {
        warn!("{empty} snapshot cells have no surviving paths");
    }
    let x = feature_matrix(dict, ensemble.initial_states())?;
    let mats = matrices_from_means(
        x,
        &means,
        lambda,
        ensemble.config().observation_step(),
        intervals,
    );
    fit_generator(
        &mats.x,
        &mats.y,
        dict,
        Provenance::RtEdmdFiltered { lambda, horizon },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{simulate_paths, Domain, SdeModel, SimConfig};
    use approx::assert_abs_diff_eq;

    /// Adaptive Simpson quadrature, independent of the trapezoid path.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        rec(
            f,
            a,
            b,
            fa,
            fm,
            fb,
            (b - a) / 6.0 * (fa + 4.0 * fm + fb),
            tol,
            50,
        )
    }

    #[test]
    fn trapezoid_examples() {
        for g in [1usize, 3, 10, 100] {
            assert_abs_diff_eq!(
                trapezoid_integrate(&vec![1.0; g + 1], 1.0 / g as f64),
                1.0,
                epsilon = 1e-14
            );
        }
        let lin: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        assert_abs_diff_eq!(trapezoid_integrate(&lin, 0.1), 0.5, epsilon = 1e-15);

        let exact = simpson(&|t: f64| (-10.0 * t).exp(), 0.0, 1.0, 1e-14);
        assert_abs_diff_eq!(exact, 0.099_995_460_007_023_75, epsilon = 1e-13);
        let samples: Vec<f64> = (0..=100)
            .map(|k| (-10.0 * k as f64 / 100.0).exp())
            .collect();
        assert!((trapezoid_integrate(&samples, 0.01) - exact).abs() <= 1e-4);
    }

    #[test]
    fn integrand_weights() {
        let means = SnapshotArray::from_fn(1, 11, 1, |_, _, out| out[0] = 1.0);
        let u = integrand_matrix(&means, 10.0, 0.1);
        assert_eq!(u.get(0, 0, 0), 100.0);
        assert_abs_diff_eq!(u.get(0, 10, 0), 0.004_539_992_976_248_485, epsilon = 1e-15);
        let zero = SnapshotArray::zeros(2, 5, 3);
        assert!(integrand_matrix(&zero, 3.0, 0.1)
            .data
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn constant_paths_give_constant_means() {
        let ens = simulate_paths(
            &SdeModel::zero(1),
            &Domain::ball(1.0),
            &[vec![0.3]],
            3,
            &SimConfig::new(1.0, 10.0, 1),
        )
        .unwrap();
        let dict = Dictionary::from_exponents(1, vec![vec![2]]).unwrap();
        let means = mean_observables(&ens, &dict).unwrap();
        for k in 0..=10 {
            assert_abs_diff_eq!(means.get(0, k, 0), 0.09, epsilon = 1e-16);
        }
    }

    #[test]
    fn zero_dynamics_labels_vanish() {
        let ens = simulate_paths(
            &SdeModel::zero(1),
            &Domain::ball(2.0),
            &[vec![0.5], vec![-0.7], vec![1.1]],
            1,
            &SimConfig::new(2.0, 1000.0, 0),
        )
        .unwrap();
        let dict = Dictionary::monomials_up_to_degree(1, 2, false);
        let lambda = 20.0;
        let mats = build_matrices(&ens, &dict, &RtConfig::plain(lambda, 2.0)).unwrap();
        // ∫₀ᵀ λ²e^{−λt}dt = λ(1 − e^{−λT}); trapezoid adds O(λ³dt²/12)
        for i in 0..3 {
            for n in 0..2 {
                let z = mats.x[(i, n)];
                let exact = z * lambda * (1.0 - (-lambda * 2.0f64).exp());
                assert!(
                    (mats.i_lambda[(i, n)] - exact).abs()
                        <= z.abs() * lambda.powi(3) * 1e-6 / 12.0 * 1.01
                );
                assert!(mats.y[(i, n)].abs() <= 1e-2);
            }
        }
        assert_eq!(mats.x.shape(), (3, 2));
    }

    #[test]
    fn identity_features_return_labels() {
        let dict = Dictionary::monomials_up_to_degree(1, 3, false);
        let x = DMatrix::identity(3, 3);
        let y = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0, 4.0, 4.0, -2.0]);
        let l = fit_generator(&x, &y, &dict, Provenance::Analytic).unwrap();
        assert_abs_diff_eq!(l.entries(), &y, epsilon = 1e-14);
    }

    #[test]
    fn zero_features_rejected() {
        let dict = Dictionary::monomials_up_to_degree(1, 2, false);
        let err = fit_generator(
            &DMatrix::zeros(4, 2),
            &DMatrix::zeros(4, 2),
            &dict,
            Provenance::Analytic,
        )
        .unwrap_err();
        assert!(matches!(err, Error::RankDeficient(_)));
    }

    #[test]
    fn modified_requires_mu_below_lambda() {
        let rt = RtConfig::modified(5.0, 5.0, 1.0);
        assert!(matches!(rt.validate(), Err(Error::Config(_))));
        assert!(RtConfig::modified(5.0, 2.0, 1.0).validate().is_ok());
    }
}
