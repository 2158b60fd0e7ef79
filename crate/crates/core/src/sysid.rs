//! Drift and diffusion recovery from a generator matrix, and path
//! reconstruction under the identified model.

use std::fmt::Write as _;
use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::generator::{GeneratorMatrix, Provenance};
use crate::linalg::psd_sqrt;
use crate::polynomial::{Exponents, Polynomial};
use crate::sde::{simulate_paths, Domain, FieldFn, SdeModel, SimConfig, TrajectoryEnsemble};

/// Most negative eigenvalue of `bbᵀ` tolerated before identification is
/// considered failed.
pub const PSD_TOL: f64 = 1e-6;

fn unit(dim: usize, i: usize) -> Exponents {
    let mut e = vec![0; dim];
    e[i] = 1;
    e
}

/// `d×N` drift coefficients; row `i` is the generator column of `x_i`.
pub fn recover_drift(l: &GeneratorMatrix) -> Result<DMatrix<f64>> {
    let dict = l.dictionary();
    let d = dict.dim();
    let mut drift = DMatrix::zeros(d, dict.len());
    for i in 0..d {
        let col = dict.coordinate_index(i).ok_or_else(|| {
            Error::Dictionary(format!("drift recovery needs the observable x{}", i + 1))
        })?;
        drift.set_row(i, &l.entries().column(col).transpose());
    }
    Ok(drift)
}

/// Coefficients of `(bbᵀ)_ij` over the dictionary, indexed `[i * d + j]`.
///
/// Uses `𝓛(x_i x_j) − f_i x_j − f_j x_i`. Product terms outside the
/// dictionary are dropped; the magnitude of the dropped part is returned.
pub fn recover_diffusion(
    l: &GeneratorMatrix,
    drift: &DMatrix<f64>,
) -> Result<(Vec<DVector<f64>>, f64)> {
    let dict = l.dictionary();
    let d = dict.dim();
    let n = dict.len();
    if drift.shape() != (d, n) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: drift.nrows(),
        });
    }
    let mut out = vec![DVector::zeros(n); d * d];
    let mut dropped = 0.0_f64;
    for i in 0..d {
        for j in i..d {
            let mut e = unit(d, i);
            e[j] += 1;
            let col = dict.index_of(&e).ok_or_else(|| {
                Error::Dictionary(format!(
                    "diffusion recovery needs the observable {}",
                    crate::polynomial::monomial_name(&e)
                ))
            })?;
            let mut coeffs: DVector<f64> = l.entries().column(col).into_owned();
            for (a, b) in [(i, j), (j, i)] {
                for (k, exps) in dict.exponents().iter().enumerate() {
                    let c = drift[(a, k)];
                    if c == 0.0 {
                        continue;
                    }
                    let mut shifted = exps.clone();
                    shifted[b] += 1;
                    match dict.index_of(&shifted) {
                        Some(idx) => coeffs[idx] -= c,
                        None => dropped = dropped.max(c.abs()),
                    }
                }
            }
            out[i * d + j] = coeffs.clone();
            out[j * d + i] = coeffs;
        }
    }
    if dropped > 0.0 {
        warn!("drift products leave the dictionary span; dropped coefficients up to {dropped:.3e}");
    }
    Ok((out, dropped))
}

fn polynomial_from(dict: &Dictionary, coeffs: impl Iterator<Item = f64>) -> Polynomial {
    Polynomial::from_terms(dict.dim(), dict.exponents().iter().cloned().zip(coeffs))
}

/// Polynomial drift and diffusion recovered from a generator matrix.
#[derive(Debug, Clone)]
pub struct IdentifiedModel {
    dictionary: Dictionary,
    drift: DMatrix<f64>,
    diffusion: Vec<DVector<f64>>,
    provenance: Provenance,
    dropped: f64,
}

#[derive(Serialize)]
struct CoefficientFile<'a> {
    observables: Vec<String>,
    provenance: &'a Provenance,
    drift: Vec<Vec<f64>>,
    diffusion: Vec<Vec<Vec<f64>>>,
}

impl IdentifiedModel {
    pub fn identify(l: &GeneratorMatrix) -> Result<Self> {
        let drift = recover_drift(l)?;
        let (diffusion, dropped) = recover_diffusion(l, &drift)?;
        Ok(Self {
            dictionary: l.dictionary().clone(),
            drift,
            diffusion,
            provenance: l.provenance().clone(),
            dropped,
        })
    }

    pub fn dim(&self) -> usize {
        self.dictionary.dim()
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dictionary
    }

    pub fn drift_coefficients(&self) -> &DMatrix<f64> {
        &self.drift
    }

    /// Coefficients of `(bbᵀ)_ij`.
    pub fn diffusion_coefficients(&self, i: usize, j: usize) -> &DVector<f64> {
        &self.diffusion[i * self.dim() + j]
    }

    /// Largest product coefficient that fell outside the dictionary.
    pub fn dropped_coefficient(&self) -> f64 {
        self.dropped
    }

    /// Coefficient of observable `exponents` in `f_i`, or zero if absent.
    pub fn drift_coefficient(&self, i: usize, exponents: &[u32]) -> f64 {
        self.dictionary
            .index_of(exponents)
            .map_or(0.0, |k| self.drift[(i, k)])
    }

    pub fn diffusion_coefficient(&self, i: usize, j: usize, exponents: &[u32]) -> f64 {
        self.dictionary
            .index_of(exponents)
            .map_or(0.0, |k| self.diffusion_coefficients(i, j)[k])
    }

    pub fn drift_polynomials(&self) -> Vec<Polynomial> {
        (0..self.dim())
            .map(|i| polynomial_from(&self.dictionary, self.drift.row(i).iter().cloned()))
            .collect()
    }

    /// `bbᵀ` entries, row-major `d×d`.
    pub fn covariance_polynomials(&self) -> Vec<Polynomial> {
        self.diffusion
            .iter()
            .map(|c| polynomial_from(&self.dictionary, c.iter().cloned()))
            .collect()
    }

    pub fn covariance_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let z = self.dictionary.evaluate(x)?;
        let d = self.dim();
        Ok(DMatrix::from_fn(d, d, |i, j| {
            self.diffusion_coefficients(i, j).dot(&z)
        }))
    }

    /// Smallest eigenvalue of `bbᵀ` over `points`.
    pub fn min_covariance_eigenvalue(&self, points: &[Vec<f64>]) -> Result<f64> {
        let mut min = f64::INFINITY;
        for x in points {
            let b = self.covariance_at(x)?;
            let e = b.symmetric_eigen().eigenvalues.min();
            min = min.min(e);
        }
        Ok(min)
    }

    /// Identification failure when `bbᵀ` is clearly indefinite somewhere in `points`.
    pub fn check_psd(&self, points: &[Vec<f64>]) -> Result<()> {
        check_min_eigenvalue(self.min_covariance_eigenvalue(points)?)
    }

    /// SDE with the identified drift and `b = (bbᵀ)^{1/2}`, padded with zero
    /// columns to `noise_dim` Wiener components.
    pub fn to_model(&self, noise_dim: usize) -> Result<SdeModel> {
        let d = self.dim();
        if noise_dim < d {
            return Err(Error::Config(format!(
                "identified model needs at least {d} noise components, got {noise_dim}"
            )));
        }
        let drift_p = self.drift_polynomials();
        let cov_p = self.covariance_polynomials();
        let drift: FieldFn = Arc::new(move |x, out| {
            for (o, p) in out.iter_mut().zip(&drift_p) {
                *o = p.eval(x);
            }
        });
        let diffusion: FieldFn = Arc::new(move |x, out| {
            let b = DMatrix::from_fn(d, d, |i, j| cov_p[i * d + j].eval(x));
            let (root, _) = psd_sqrt(&b);
            out.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..d {
                for j in 0..d {
                    out[i * noise_dim + j] = root[(i, j)];
                }
            }
        });
        Ok(SdeModel::custom(
            "identified",
            d,
            noise_dim,
            drift,
            diffusion,
        ))
    }

    /// Per-dimension polynomial listing.
    pub fn report(&self) -> String {
        let d = self.dim();
        let mut s = String::new();
        let _ = writeln!(s, "# identified from {}", self.provenance.method_id());
        let _ = writeln!(s, "# observables: {}", self.dictionary.names().join(", "));
        for (i, p) in self.drift_polynomials().iter().enumerate() {
            let _ = writeln!(s, "f_{}(x) = {p}", i + 1);
        }
        let cov = self.covariance_polynomials();
        for i in 0..d {
            for j in i..d {
                let _ = writeln!(s, "(bb^T)_{}{}(x) = {}", i + 1, j + 1, cov[i * d + j]);
            }
        }
        if self.dropped > 0.0 {
            let _ = writeln!(s, "# dropped out-of-span coefficient: {:e}", self.dropped);
        }
        s
    }

    /// Machine-readable coefficient arrays.
    pub fn coefficients_json(&self) -> String {
        let d = self.dim();
        let file = CoefficientFile {
            observables: self.dictionary.names(),
            provenance: &self.provenance,
            drift: (0..d)
                .map(|i| self.drift.row(i).iter().cloned().collect())
                .collect(),
            diffusion: (0..d)
                .map(|i| {
                    (0..d)
                        .map(|j| self.diffusion_coefficients(i, j).iter().cloned().collect())
                        .collect()
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("coefficients serialize")
    }
}

/// Simulates the identified model. With the seed and noise sharing of a
/// reference run, every path sees the same Wiener increments.
pub fn reconstruct_paths(
    identified: &IdentifiedModel,
    noise_dim: usize,
    domain: &Domain,
    initial_states: &[Vec<f64>],
    paths_per_state: usize,
    config: &SimConfig,
) -> Result<TrajectoryEnsemble> {
    let model = identified.to_model(noise_dim)?;
    simulate_paths(&model, domain, initial_states, paths_per_state, config)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathwiseError {
    /// Mean of `|x − x̂|` over all paths, snapshots and coordinates.
    pub mean_abs: f64,
    pub max_abs: f64,
    /// Mean absolute error at each snapshot.
    pub per_snapshot: Vec<f64>,
}

pub fn pathwise_error(
    reference: &TrajectoryEnsemble,
    other: &TrajectoryEnsemble,
) -> Result<PathwiseError> {
    if reference.num_initial() != other.num_initial()
        || reference.paths_per_state() != other.paths_per_state()
        || reference.snapshots() != other.snapshots()
        || reference.dim() != other.dim()
    {
        return Err(Error::Config("ensembles have different shapes".into()));
    }
    let snaps = reference.snapshots();
    let mut per = vec![0.0; snaps];
    let mut max = 0.0_f64;
    let count = (reference.num_initial() * reference.paths_per_state() * reference.dim()) as f64;
    for i in 0..reference.num_initial() {
        for j in 0..reference.paths_per_state() {
            for (k, slot) in per.iter_mut().enumerate() {
                for (a, b) in reference.state(i, j, k).iter().zip(other.state(i, j, k)) {
                    let e = (a - b).abs();
                    *slot += e;
                    max = max.max(e);
                }
            }
        }
    }
    per.iter_mut().for_each(|v| *v /= count);
    let mean_abs = per.iter().sum::<f64>() / snaps as f64;
    Ok(PathwiseError {
        mean_abs,
        max_abs: max,
        per_snapshot: per,
    })
}

/// Identification failure when `min` is below `-PSD_TOL`.
pub fn check_min_eigenvalue(min: f64) -> Result<()> {
    if min < -PSD_TOL {
        return Err(Error::Numerical(format!(
            "identified diffusion is indefinite (eigenvalue {min:.3e})"
        )));
    }
    Ok(())
}
