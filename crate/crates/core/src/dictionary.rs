//! Monomial observable dictionaries with analytic derivatives and the exact
//! generator action used as ground truth.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{GeneratorMatrix, Provenance};
use crate::polynomial::{monomial_name, monomial_value, Exponents, Polynomial};
use crate::sde::SdeModel;

/// Relative size below which a generator coefficient outside the dictionary
/// span is treated as round-off rather than a closure failure.
const CLOSURE_RTOL: f64 = 1e-14;

/// Ordered list of monomial observables `z_n(x) = Π x_i^{α_i}`.
///
/// Order is graded lexicographic (total degree ascending, then exponent
/// vectors in descending lexicographic order), so matrix entries are
/// reproducible across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DictionarySpec", into = "DictionarySpec")]
pub struct Dictionary {
    dim: usize,
    exponents: Vec<Exponents>,
    max_degree: u32,
    #[serde(skip)]
    index: HashMap<Exponents, usize>,
}

/// Serialized form: the state dimension and the ordered exponent vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DictionarySpec {
    pub dim: usize,
    pub exponents: Vec<Exponents>,
}

impl TryFrom<DictionarySpec> for Dictionary {
    type Error = Error;
    fn try_from(spec: DictionarySpec) -> Result<Self> {
        Dictionary::from_exponents(spec.dim, spec.exponents)
    }
}

impl From<Dictionary> for DictionarySpec {
    fn from(d: Dictionary) -> Self {
        DictionarySpec {
            dim: d.dim,
            exponents: d.exponents,
        }
    }
}

impl Dictionary {
    /// All monomials with `1 <= |α| <= max_degree` (plus the constant if
    /// requested), graded-lex ordered.
    pub fn monomials_up_to_degree(dim: usize, max_degree: u32, include_constant: bool) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        assert!(max_degree >= 1, "max degree must be positive");
        let start = if include_constant { 0 } else { 1 };
        let mut exps = Vec::new();
        for degree in start..=max_degree {
            let mut level = Vec::new();
            compositions(dim, degree, &mut vec![0; dim], 0, &mut level);
            level.sort_by(|a, b| b.cmp(a));
            exps.extend(level);
        }
        Self::from_exponents(dim, exps).expect("generated exponents are distinct")
    }

    /// Dictionary from an explicit ordered list of exponent vectors.
    pub fn from_exponents(dim: usize, exponents: Vec<Exponents>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dictionary("dimension must be positive".into()));
        }
        if exponents.is_empty() {
            return Err(Error::Dictionary(
                "dictionary must contain at least one observable".into(),
            ));
        }
        let mut index = HashMap::with_capacity(exponents.len());
        for (n, e) in exponents.iter().enumerate() {
            if e.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: e.len(),
                });
            }
            if index.insert(e.clone(), n).is_some() {
                return Err(Error::Dictionary(format!(
                    "duplicate observable {}",
                    monomial_name(e)
                )));
            }
        }
        let max_degree = exponents.iter().map(|e| e.iter().sum()).max().unwrap_or(0);
        Ok(Self {
            dim,
            exponents,
            max_degree,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[Exponents] {
        &self.exponents
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    pub fn index_of(&self, exponents: &[u32]) -> Option<usize> {
        self.index.get(exponents).copied()
    }

    /// Index of the degree-one observable `x_i`.
    pub fn coordinate_index(&self, i: usize) -> Option<usize> {
        let mut e = vec![0; self.dim];
        e[i] = 1;
        self.index_of(&e)
    }

    pub fn constant_index(&self) -> Option<usize> {
        self.index_of(&vec![0; self.dim])
    }

    pub fn names(&self) -> Vec<String> {
        self.exponents.iter().map(|e| monomial_name(e)).collect()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        let mut out = DVector::zeros(self.len());
        self.evaluate_into(x, out.as_mut_slice());
        Ok(out)
    }

    /// Unchecked evaluation into a caller-provided buffer of length `N`.
    ///
    /// Powers of each coordinate are tabulated once, so the cost is
    /// `O(N·d)` multiplications.
    pub fn evaluate_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.len());
        let p = self.max_degree as usize;
        let mut powers = [0.0_f64; 64];
        if self.dim * (p + 1) <= powers.len() {
            for (i, &xi) in x.iter().enumerate() {
                let row = &mut powers[i * (p + 1)..(i + 1) * (p + 1)];
                row[0] = 1.0;
                for k in 1..=p {
                    row[k] = row[k - 1] * xi;
                }
            }
            for (o, e) in out.iter_mut().zip(&self.exponents) {
                let mut v = 1.0;
                for (i, &a) in e.iter().enumerate() {
                    v *= powers[i * (p + 1) + a as usize];
                }
                *o = v;
            }
        } else {
            for (o, e) in out.iter_mut().zip(&self.exponents) {
                *o = monomial_value(e, x);
            }
        }
    }

    /// Jacobian of the feature map: row `n` is `∇z_n(x)`.
    pub fn gradient(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(x)?;
        let mut g = DMatrix::zeros(self.len(), self.dim);
        for (n, e) in self.exponents.iter().enumerate() {
            for i in 0..self.dim {
                if e[i] == 0 {
                    continue;
                }
                let mut de = e.clone();
                de[i] -= 1;
                g[(n, i)] = e[i] as f64 * monomial_value(&de, x);
            }
        }
        Ok(g)
    }

    /// Hessians `∂²z_n/∂x_i∂x_j`, one `d×d` matrix per observable.
    pub fn hessian(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        self.check_dim(x)?;
        let d = self.dim;
        Ok(self
            .exponents
            .iter()
            .map(|e| {
                DMatrix::from_fn(d, d, |i, j| {
                    let mut de = e.clone();
                    let ci = de[i] as f64;
                    if de[i] == 0 {
                        return 0.0;
                    }
                    de[i] -= 1;
                    let cj = de[j] as f64;
                    if de[j] == 0 {
                        return 0.0;
                    }
                    de[j] -= 1;
                    ci * cj * monomial_value(&de, x)
                })
            })
            .collect())
    }

    /// `𝓛z_n(x) = Σ f_i ∂_i z_n + ½ Σ (bbᵀ)_ij ∂_i∂_j z_n` for every observable.
    pub fn analytic_generator_action(&self, model: &SdeModel, x: &[f64]) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        if model.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: model.dim(),
            });
        }
        let grad = self.gradient(x)?;
        let hess = self.hessian(x)?;
        let f = model.drift_at(x);
        let cov = model.covariance_at(x);
        Ok(DVector::from_fn(self.len(), |n, _| {
            let first: f64 = (0..self.dim).map(|i| f[i] * grad[(n, i)]).sum();
            let second: f64 = cov.component_mul(&hess[n]).sum();
            first + 0.5 * second
        }))
    }

    /// Generator applied to monomial `n`, as a polynomial. Requires a model
    /// with polynomial drift and diffusion.
    pub fn generator_polynomial(&self, model: &SdeModel, n: usize) -> Result<Polynomial> {
        let poly = model.polynomial_form().ok_or_else(|| {
            Error::Dictionary(format!("model '{}' has no polynomial form", model.name()))
        })?;
        let d = self.dim;
        let z = Polynomial::monomial(self.exponents[n].clone(), 1.0);
        let cov = poly.covariance();
        let mut out = Polynomial::zero(d);
        for i in 0..d {
            let dz = z.derivative(i);
            if dz.is_zero() {
                continue;
            }
            out = out.add(&poly.drift[i].mul(&dz));
            for j in 0..d {
                let ddz = dz.derivative(j);
                if ddz.is_zero() {
                    continue;
                }
                out = out.add(&cov[i * d + j].mul(&ddz).scale(0.5));
            }
        }
        Ok(out)
    }

    /// Coefficients of a polynomial over the dictionary. Terms outside the
    /// span are returned separately.
    pub fn project_polynomial(&self, p: &Polynomial) -> (DVector<f64>, Polynomial) {
        let mut coeffs = DVector::zeros(self.len());
        let mut residual = Polynomial::zero(self.dim);
        for (e, c) in p.terms() {
            match self.index_of(e) {
                Some(k) => coeffs[k] += c,
                None => residual.add_term(e.clone(), c),
            }
        }
        (coeffs, residual)
    }

    /// Exact generator matrix `L*` with `𝓛z_n = Σ_m L*[m, n] z_m`
    /// (column `n` holds the expansion of `𝓛z_n`).
    pub fn analytic_generator_matrix(&self, model: &SdeModel) -> Result<GeneratorMatrix> {
        let n_obs = self.len();
        let mut entries = DMatrix::zeros(n_obs, n_obs);
        for n in 0..n_obs {
            let action = self.generator_polynomial(model, n)?;
            let (coeffs, residual) = self.project_polynomial(&action);
            let scale = action.max_abs_coefficient().max(1.0);
            if residual.max_abs_coefficient() > CLOSURE_RTOL * scale {
                return Err(Error::ClosureFailure {
                    observable: monomial_name(&self.exponents[n]),
                });
            }
            entries.set_column(n, &coeffs);
        }
        GeneratorMatrix::new(entries, self.clone(), Provenance::Analytic)
    }
}

/// All exponent vectors of length `dim` summing to `degree`.
fn compositions(dim: usize, degree: u32, cur: &mut Vec<u32>, pos: usize, out: &mut Vec<Exponents>) {
    if pos == dim - 1 {
        cur[pos] = degree;
        out.push(cur.clone());
        return;
    }
    for k in (0..=degree).rev() {
        cur[pos] = k;
        compositions(dim, degree - k, cur, pos + 1, out);
    }
    cur[pos] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ou_dictionary_has_five_monomials() {
        let d = Dictionary::monomials_up_to_degree(1, 5, false);
        assert_eq!(d.len(), 5);
        assert_eq!(
            d.exponents(),
            &[vec![1], vec![2], vec![3], vec![4], vec![5]]
        );
    }

    #[test]
    fn two_dimensional_graded_lex_order() {
        let d = Dictionary::monomials_up_to_degree(2, 2, false);
        assert_eq!(
            d.exponents(),
            &[vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]
        );
        assert_eq!(d.names(), vec!["x1", "x2", "x1^2", "x1*x2", "x2^2"]);
    }

    #[test]
    fn constant_comes_first() {
        let d = Dictionary::monomials_up_to_degree(1, 1, true);
        assert_eq!(d.exponents(), &[vec![0], vec![1]]);
        assert_eq!(d.constant_index(), Some(0));
    }

    #[test]
    fn lotka_volterra_default_size() {
        assert_eq!(Dictionary::monomials_up_to_degree(2, 4, false).len(), 14);
    }

    #[test]
    fn evaluate_examples() {
        let d = Dictionary::monomials_up_to_degree(1, 3, false);
        assert_eq!(d.evaluate(&[2.0]).unwrap().as_slice(), &[2.0, 4.0, 8.0]);
        let d2 = Dictionary::monomials_up_to_degree(2, 2, false);
        assert_eq!(
            d2.evaluate(&[1.0, -1.0]).unwrap().as_slice(),
            &[1.0, -1.0, 1.0, -1.0, 1.0]
        );
        assert!(d2.evaluate(&[0.0, 0.0]).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn evaluate_rejects_wrong_dimension() {
        let d = Dictionary::monomials_up_to_degree(2, 2, false);
        assert!(matches!(
            d.evaluate(&[1.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn duplicate_exponents_rejected() {
        assert!(Dictionary::from_exponents(1, vec![vec![1], vec![1]]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let d = Dictionary::monomials_up_to_degree(2, 4, true);
        let x = [0.7, -1.3];
        let g = d.gradient(&x).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (d.evaluate(&xp).unwrap() - d.evaluate(&xm).unwrap()) / (2.0 * h);
            for n in 0..d.len() {
                let scale = g[(n, i)].abs().max(1.0);
                assert!((fd[n] - g[(n, i)]).abs() / scale < 1e-6, "n={n} i={i}");
            }
        }
    }

    #[test]
    fn hessian_of_mixed_monomial() {
        let d = Dictionary::from_exponents(2, vec![vec![2, 1]]).unwrap();
        let h = &d.hessian(&[3.0, 2.0]).unwrap()[0];
        // z = x1^2 x2: d11 = 2 x2, d12 = 2 x1, d22 = 0
        assert_abs_diff_eq!(h[(0, 0)], 4.0);
        assert_abs_diff_eq!(h[(0, 1)], 6.0);
        assert_abs_diff_eq!(h[(1, 0)], 6.0);
        assert_abs_diff_eq!(h[(1, 1)], 0.0);
    }

    #[test]
    fn ou_generator_on_square() {
        let model = SdeModel::ornstein_uhlenbeck(-0.5, 0.02);
        let d = Dictionary::from_exponents(1, vec![vec![2]]).unwrap();
        let a = d.analytic_generator_action(&model, &[1.0]).unwrap();
        assert_abs_diff_eq!(a[0], -0.9996, epsilon = 1e-15);
    }

    #[test]
    fn generator_of_constant_vanishes() {
        let model = SdeModel::lotka_volterra(Default::default());
        let d = Dictionary::monomials_up_to_degree(2, 1, true);
        let a = d.analytic_generator_action(&model, &[2.0, 1.5]).unwrap();
        assert_eq!(a[d.constant_index().unwrap()], 0.0);
    }

    #[test]
    fn drift_only_cubic() {
        let model = SdeModel::linear(DMatrix::from_element(1, 1, -1.0), DMatrix::zeros(1, 1));
        let d = Dictionary::from_exponents(1, vec![vec![3]]).unwrap();
        let a = d.analytic_generator_action(&model, &[2.0]).unwrap();
        assert_abs_diff_eq!(a[0], -24.0);
    }

    #[test]
    fn ou_analytic_matrix_structure() {
        let mu = -0.5;
        let sigma = 0.02;
        let model = SdeModel::ornstein_uhlenbeck(mu, sigma);
        let d = Dictionary::monomials_up_to_degree(1, 5, false);
        // x^2 -> 2μ x^2 + σ², and the constant is absent: closure fails
        assert!(matches!(
            d.analytic_generator_matrix(&model),
            Err(Error::ClosureFailure { .. })
        ));
        let d = Dictionary::monomials_up_to_degree(1, 5, true);
        let l = d.analytic_generator_matrix(&model).unwrap();
        for n in 0..=5 {
            assert_abs_diff_eq!(l.entries()[(n, n)], n as f64 * mu, epsilon = 1e-15);
        }
        // x^3 -> ... + 3σ² x
        assert_abs_diff_eq!(l.entries()[(1, 3)], 3.0 * sigma * sigma, epsilon = 1e-18);
        assert_abs_diff_eq!(l.entries()[(0, 2)], sigma * sigma, epsilon = 1e-18);
    }

    #[test]
    fn zero_model_gives_zero_matrix() {
        let model = SdeModel::zero(2);
        let d = Dictionary::monomials_up_to_degree(2, 3, false);
        let l = d.analytic_generator_matrix(&model).unwrap();
        assert!(l.entries().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn lotka_volterra_closure_fails_at_top_degree() {
        let model = SdeModel::lotka_volterra(Default::default());
        let d = Dictionary::monomials_up_to_degree(2, 4, false);
        assert!(d.analytic_generator_matrix(&model).is_err());
    }

    #[test]
    fn dictionary_serde_round_trip() {
        let d = Dictionary::monomials_up_to_degree(2, 3, true);
        let s = serde_json::to_string(&d).unwrap();
        let back: Dictionary = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.index_of(&[1, 1]), d.index_of(&[1, 1]));
    }
}
