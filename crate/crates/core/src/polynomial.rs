//! Sparse multivariate polynomials with real coefficients.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Exponent vector of a monomial, one entry per state coordinate.
pub type Exponents = Vec<u32>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    dim: usize,
    #[serde(with = "term_list")]
    terms: BTreeMap<Exponents, f64>,
}

/// Terms as a list of `(exponents, coefficient)` pairs, since JSON maps need string keys.
mod term_list {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::Exponents;

    pub fn serialize<S: Serializer>(
        terms: &BTreeMap<Exponents, f64>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let v: Vec<(&Exponents, &f64)> = terms.iter().collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<Exponents, f64>, D::Error> {
        let v: Vec<(Exponents, f64)> = Vec::deserialize(d)?;
        Ok(v.into_iter().filter(|(_, c)| *c != 0.0).collect())
    }
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::monomial(vec![0; dim], c)
    }

    /// `c * x_i`
    pub fn coordinate(dim: usize, i: usize, c: f64) -> Self {
        let mut e = vec![0; dim];
        e[i] = 1;
        Self::monomial(e, c)
    }

    pub fn monomial(exponents: Exponents, c: f64) -> Self {
        let dim = exponents.len();
        let mut p = Self::zero(dim);
        p.add_term(exponents, c);
        p
    }

    pub fn from_terms(dim: usize, terms: impl IntoIterator<Item = (Exponents, f64)>) -> Self {
        let mut p = Self::zero(dim);
        for (e, c) in terms {
            assert_eq!(
                e.len(),
                dim,
                "exponent length must equal polynomial dimension"
            );
            p.add_term(e, c);
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn add_term(&mut self, exponents: Exponents, c: f64) {
        if c == 0.0 {
            return;
        }
        let v = self.terms.get(&exponents).copied().unwrap_or(0.0) + c;
        if v == 0.0 {
            self.terms.remove(&exponents);
        } else {
            self.terms.insert(exponents, v);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponents, f64)> {
        self.terms.iter().map(|(e, c)| (e, *c))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * monomial_value(e, x))
            .sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_terms(self.dim, self.terms.iter().map(|(e, c)| (e.clone(), c * s)))
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        for (e, c) in other.terms() {
            out.add_term(e.clone(), c);
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut out = Self::zero(self.dim);
        for (ea, ca) in self.terms() {
            for (eb, cb) in other.terms() {
                let e: Exponents = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.add_term(e, ca * cb);
            }
        }
        out
    }

    /// Partial derivative with respect to coordinate `i`.
    pub fn derivative(&self, i: usize) -> Self {
        let mut out = Self::zero(self.dim);
        for (e, c) in self.terms() {
            if e[i] > 0 {
                let mut de = e.clone();
                de[i] -= 1;
                out.add_term(de, c * e[i] as f64);
            }
        }
        out
    }

    /// Largest absolute coefficient.
    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }
}

/// `Π x_i^{e_i}` evaluated with repeated multiplication.
pub fn monomial_value(e: &[u32], x: &[f64]) -> f64 {
    e.iter()
        .zip(x)
        .fold(1.0, |acc, (&p, &xi)| acc * xi.powi(p as i32))
}

/// Human-readable monomial name, e.g. `x1^2*x2`; the constant is `1`.
pub fn monomial_name(e: &[u32]) -> String {
    let single = e.len() == 1;
    let parts: Vec<String> = e
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0)
        .map(|(i, &p)| {
            let var = if single {
                "x".to_string()
            } else {
                format!("x{}", i + 1)
            };
            if p == 1 {
                var
            } else {
                format!("{var}^{p}")
            }
        })
        .collect();
    if parts.is_empty() {
        "1".into()
    } else {
        parts.join("*")
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (e, c) in &self.terms {
            if first {
                write!(f, "{c:+.6e}")?;
            } else {
                write!(f, " {} {:.6e}", if *c < 0.0 { '-' } else { '+' }, c.abs())?;
            }
            if e.iter().any(|&p| p > 0) {
                write!(f, "*{}", monomial_name(e))?;
            }
            first = false;
        }
        Ok(())
    }
}
