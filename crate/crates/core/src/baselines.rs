//! Finite-lag baselines: least-squares Koopman matrix with a matrix logarithm,
//! and the first-order finite-difference generator.

use log::warn;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::generator::{GeneratorMatrix, Provenance};
use crate::linalg::{complex_condition, eigen_decompose, StreamingLeastSquares, PINV_RTOL};
use crate::sde::TrajectoryEnsemble;

/// Eigenvalues closer to the origin than this have no usable logarithm.
pub const LOG_MODULUS_FLOOR: f64 = 1e-12;
/// Imaginary residue of the logarithm below this is discarded silently.
pub const IMAG_RESIDUE_TOL: f64 = 1e-8;
/// Eigenvector condition number above which `K` is treated as defective.
const DEFECTIVE_CONDITION: f64 = 1e12;
/// Relative null-space residual above which a repeated eigenvalue lacks a full eigenbasis.
const DEFECT_TOL: f64 = 1e-6;

/// Finite-lag Koopman matrix with `𝒦_t z_n ≈ Σ_m K[m, n] z_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanMatrix {
    entries: DMatrix<f64>,
    lag: f64,
    lag_steps: usize,
    pairs: usize,
    dictionary: Dictionary,
}

impl KoopmanMatrix {
    pub fn new(entries: DMatrix<f64>, lag: f64, dictionary: Dictionary) -> Result<Self> {
        let n = dictionary.len();
        if entries.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: entries.nrows(),
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "Koopman matrix has non-finite entries".into(),
            ));
        }
        if !(lag > 0.0) {
            return Err(Error::Config(format!("lag must be positive, got {lag}")));
        }
        Ok(Self {
            entries,
            lag,
            lag_steps: 0,
            pairs: 0,
            dictionary,
        })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn lag(&self) -> f64 {
        self.lag
    }

    pub fn lag_steps(&self) -> usize {
        self.lag_steps
    }

    /// Number of snapshot pairs used in the fit.
    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dictionary
    }
}

/// Pooled `(Z(X(t_k)), Z(X(t_{k+s})))` pairs, each accumulated as one
/// least-squares row via `row(features, shifted, out)`.
fn accumulate_pairs(
    ensemble: &TrajectoryEnsemble,
    dict: &Dictionary,
    lag_steps: usize,
    row: impl Fn(&[f64], &[f64], &mut [f64]) + Sync,
) -> Result<StreamingLeastSquares> {
    if ensemble.dim() != dict.dim() {
        return Err(Error::DimensionMismatch {
            expected: dict.dim(),
            got: ensemble.dim(),
        });
    }
    if lag_steps == 0 || lag_steps > ensemble.intervals() {
        return Err(Error::Config(format!(
            "lag of {lag_steps} steps outside 1..={}",
            ensemble.intervals()
        )));
    }
    let n = dict.len();
    let snaps = ensemble.snapshots();
    // one accumulator per initial state, merged in index order
    let parts: Vec<StreamingLeastSquares> = (0..ensemble.num_initial())
        .into_par_iter()
        .map(|i| {
            let mut acc = StreamingLeastSquares::new(n, n);
            let mut features = vec![0.0; snaps * n];
            let mut rhs = vec![0.0; n];
            for j in 0..ensemble.paths_per_state() {
                // pairs must end strictly before the exit snapshot
                let end = ensemble.exit_index(i, j).unwrap_or(snaps);
                if end <= lag_steps {
                    continue;
                }
                for k in 0..end {
                    dict.evaluate_into(ensemble.state(i, j, k), &mut features[k * n..(k + 1) * n]);
                }
                for k in 0..end - lag_steps {
                    let g = &features[k * n..(k + 1) * n];
                    let h = &features[(k + lag_steps) * n..(k + lag_steps + 1) * n];
                    row(g, h, &mut rhs);
                    acc.push_row(g, &rhs);
                }
            }
            acc
        })
        .collect();
    let mut total = StreamingLeastSquares::new(n, n);
    for p in parts {
        if p.rows() > 0 {
            total.merge(p);
        }
    }
    if total.rows() == 0 {
        return Err(Error::EmptyData { lag_steps });
    }
    Ok(total)
}

/// Least-squares Koopman matrix `K = G†H` over all valid pooled pairs.
pub fn fit_koopman(
    ensemble: &TrajectoryEnsemble,
    dict: &Dictionary,
    lag_steps: usize,
) -> Result<KoopmanMatrix> {
    let acc = accumulate_pairs(ensemble, dict, lag_steps, |_, h, out| {
        out.copy_from_slice(h)
    })?;
    let pairs = acc.rows();
    let (k, info) = acc.solve(PINV_RTOL)?;
    if !info.full_rank(dict.len()) {
        warn!("Koopman regression has rank {} < {}", info.rank, dict.len());
    }
    let mut km = KoopmanMatrix::new(
        k,
        lag_steps as f64 * ensemble.config().observation_step(),
        dict.clone(),
    )?;
    km.lag_steps = lag_steps;
    km.pairs = pairs;
    Ok(km)
}

/// Generator from the principal matrix logarithm, with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LogGenerator {
    pub generator: GeneratorMatrix,
    /// Largest imaginary part left in `V log(Λ) V⁻¹ / t`.
    pub imaginary_residue: f64,
}

impl LogGenerator {
    /// True when the discarded imaginary residue was above tolerance.
    pub fn flagged(&self) -> bool {
        self.imaginary_residue > IMAG_RESIDUE_TOL
    }
}

/// `L = (1/t) V diag(log β) V⁻¹` via the eigendecomposition of `K`.
pub fn generator_from_log(k: &KoopmanMatrix) -> Result<LogGenerator> {
    let eig = eigen_decompose(k.entries())?;
    for b in &eig.values {
        let modulus = b.norm();
        if modulus <= LOG_MODULUS_FLOOR {
            return Err(Error::LogBranch {
                re: b.re,
                im: b.im,
                reason: "is numerically zero".into(),
            });
        }
        if b.re < 0.0 && b.im.abs() <= LOG_MODULUS_FLOOR * modulus.max(1.0) {
            return Err(Error::LogBranch {
                re: b.re,
                im: b.im,
                reason: "lies on the negative real axis".into(),
            });
        }
    }
    let cond = complex_condition(&eig.vectors);
    if !(cond < DEFECTIVE_CONDITION) || eig.defect > DEFECT_TOL {
        return Err(Error::Numerical(format!(
            "Koopman matrix is defective or nearly so (eigenvector condition {cond:.3e})"
        )));
    }
    let v = &eig.vectors;
    let v_inv = v
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("eigenvector matrix is singular".into()))?;
    let logs = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        eig.values.len(),
        eig.values.iter().map(|b| b.ln() / k.lag()),
    ));
    let l: DMatrix<Complex64> = v * logs * v_inv;
    let imaginary_residue = l.iter().fold(0.0_f64, |m, z| m.max(z.im.abs()));
    let real = l.map(|z| z.re);
    if imaginary_residue > IMAG_RESIDUE_TOL {
        warn!("matrix logarithm leaves imaginary residue {imaginary_residue:.3e}; real part kept");
    }
    let generator = GeneratorMatrix::new(
        real,
        k.dictionary().clone(),
        Provenance::EdmdKlm { lag: k.lag() },
    )?;
    Ok(LogGenerator {
        generator,
        imaginary_residue,
    })
}

/// EDMD generator: Koopman fit followed by the matrix logarithm.
pub fn edmd_klm(
    ensemble: &TrajectoryEnsemble,
    dict: &Dictionary,
    lag_steps: usize,
) -> Result<LogGenerator> {
    generator_from_log(&fit_koopman(ensemble, dict, lag_steps)?)
}

/// Least-squares fit of `(Z(X(t_{k+s})) − Z(X(t_k)))/t` on `Z(X(t_k))`.
pub fn gedmd_fdm(
    ensemble: &TrajectoryEnsemble,
    dict: &Dictionary,
    lag_steps: usize,
) -> Result<GeneratorMatrix> {
    let t = lag_steps as f64 * ensemble.config().observation_step();
    let acc = accumulate_pairs(ensemble, dict, lag_steps, |g, h, out| {
        for ((o, a), b) in out.iter_mut().zip(g).zip(h) {
            *o = (b - a) / t;
        }
    })?;
    let (l, info) = acc.solve(PINV_RTOL)?;
    if !info.full_rank(dict.len()) {
        warn!(
            "finite-difference regression has rank {} < {}",
            info.rank,
            dict.len()
        );
    }
    GeneratorMatrix::new(l, dict.clone(), Provenance::GedmdFdm { lag: t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{simulate_paths, Domain, SdeModel, SimConfig};
    use approx::assert_abs_diff_eq;

    fn still_ensemble() -> TrajectoryEnsemble {
        let starts: Vec<Vec<f64>> = (0..7).map(|i| vec![-0.9 + 0.3 * i as f64]).collect();
        simulate_paths(
            &SdeModel::zero(1),
            &Domain::ball(2.0),
            &starts,
            2,
            &SimConfig::new(1.0, 10.0, 0),
        )
        .unwrap()
    }

    #[test]
    fn identity_dynamics() {
        let ens = still_ensemble();
        let dict = Dictionary::monomials_up_to_degree(1, 5, false);
        let k = fit_koopman(&ens, &dict, 1).unwrap();
        assert_eq!(k.entries().shape(), (5, 5));
        assert_abs_diff_eq!(k.entries(), &DMatrix::identity(5, 5), epsilon = 1e-10);
        let g = gedmd_fdm(&ens, &dict, 1).unwrap();
        assert!(g.entries().iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn log_of_identity_is_zero() {
        let dict = Dictionary::monomials_up_to_degree(1, 3, false);
        let k = KoopmanMatrix::new(DMatrix::identity(3, 3), 0.01, dict).unwrap();
        let l = generator_from_log(&k).unwrap();
        assert!(l.generator.entries().iter().all(|v| v.abs() < 1e-14));
        assert!(!l.flagged());
    }

    #[test]
    fn diagonal_round_trip() {
        let dict = Dictionary::monomials_up_to_degree(1, 2, false);
        let t: f64 = 0.01;
        let k = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            (-0.5f64 * t).exp(),
            (-t).exp(),
        ]));
        let l = generator_from_log(&KoopmanMatrix::new(k, t, dict).unwrap()).unwrap();
        let expected = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-0.5, -1.0]));
        assert_abs_diff_eq!(l.generator.entries(), &expected, epsilon = 1e-10);
    }

    #[test]
    fn negative_eigenvalue_rejected() {
        let dict = Dictionary::monomials_up_to_degree(1, 2, false);
        let k = DMatrix::from_row_slice(2, 2, &[-0.1, 0.0, 0.0, 0.9]);
        let err =
            generator_from_log(&KoopmanMatrix::new(k, 0.1, dict.clone()).unwrap()).unwrap_err();
        assert!(matches!(err, Error::LogBranch { .. }));
        let k = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.9]);
        let err = generator_from_log(&KoopmanMatrix::new(k, 0.1, dict).unwrap()).unwrap_err();
        assert!(matches!(err, Error::LogBranch { .. }));
    }

    #[test]
    fn defective_rejected() {
        let dict = Dictionary::monomials_up_to_degree(1, 2, false);
        let k = DMatrix::from_row_slice(2, 2, &[0.9, 1.0, 0.0, 0.9]);
        let err = generator_from_log(&KoopmanMatrix::new(k, 0.1, dict).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn lag_out_of_range() {
        let ens = still_ensemble();
        let dict = Dictionary::monomials_up_to_degree(1, 2, false);
        assert!(matches!(fit_koopman(&ens, &dict, 0), Err(Error::Config(_))));
        assert!(matches!(
            fit_koopman(&ens, &dict, 11),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn pairs_after_exit_are_dropped() {
        // every path leaves on the first step, so no pair survives
        let model = SdeModel::linear(DMatrix::from_element(1, 1, 100.0), DMatrix::zeros(1, 1));
        let ens = simulate_paths(
            &model,
            &Domain::ball(1.0),
            &[vec![0.5]],
            2,
            &SimConfig::new(1.0, 10.0, 0),
        )
        .unwrap();
        assert_eq!(ens.exit_index(0, 0), Some(1));
        let dict = Dictionary::monomials_up_to_degree(1, 2, false);
        assert!(matches!(
            fit_koopman(&ens, &dict, 1),
            Err(Error::EmptyData { lag_steps: 1 })
        ));
    }
}
