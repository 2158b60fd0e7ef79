//! SDE models, Euler–Maruyama path generation and stopping at the boundary
//! of a bounded domain.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polynomial::Polynomial;

/// `out = field(x)`; drift writes `d` values, diffusion writes `d×l` values row-major.
pub type FieldFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Drift and diffusion given as polynomials, which makes the generator
/// action on monomials exactly computable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialSde {
    pub drift: Vec<Polynomial>,
    /// `d×l` entries, row-major.
    pub diffusion: Vec<Polynomial>,
    pub noise_dim: usize,
}

impl PolynomialSde {
    pub fn dim(&self) -> usize {
        self.drift.len()
    }

    /// `B = bbᵀ` as `d×d` polynomials, row-major.
    pub fn covariance(&self) -> Vec<Polynomial> {
        let d = self.dim();
        let l = self.noise_dim;
        let mut out = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                let mut acc = Polynomial::zero(d);
                for c in 0..l {
                    acc = acc.add(&self.diffusion[i * l + c].mul(&self.diffusion[j * l + c]));
                }
                out.push(acc);
            }
        }
        out
    }
}

/// `dX = f(X) dt + b(X) dW` with `X ∈ ℝ^d`, `W ∈ ℝ^l`.
#[derive(Clone)]
pub struct SdeModel {
    name: String,
    dim: usize,
    noise_dim: usize,
    drift: FieldFn,
    diffusion: FieldFn,
    polynomial: Option<PolynomialSde>,
    analytic_spectrum: Option<Vec<Complex64>>,
}

impl fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("polynomial", &self.polynomial.is_some())
            .field("analytic_spectrum", &self.analytic_spectrum)
            .finish()
    }
}

/// Parameters of the stochastic Lotka–Volterra system
/// `dX₁ = (a₁ − b₁X₂ − c₁X₁)X₁ dt + σ₁X₁ dW₁`,
/// `dX₂ = (−a₂ + b₂X₁ − c₂X₂)X₂ dt + σ₂X₂ dW₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LotkaVolterraParams {
    pub a1: f64,
    pub b1: f64,
    pub c1: f64,
    pub a2: f64,
    pub b2: f64,
    pub c2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl Default for LotkaVolterraParams {
    fn default() -> Self {
        Self {
            a1: 1.0,
            b1: 0.5,
            c1: 0.01,
            a2: 0.75,
            b2: 0.25,
            c2: 0.01,
            sigma1: 0.05,
            sigma2: 0.05,
        }
    }
}

impl LotkaVolterraParams {
    /// Reference principal eigenvalue pair for the default parameters.
    pub const PRINCIPAL_PAIR: [Complex64; 2] = [
        Complex64::new(-0.02509, 0.86363),
        Complex64::new(-0.02509, -0.86363),
    ];

    /// Interior equilibrium of the deterministic part.
    pub fn coexistence_equilibrium(&self) -> [f64; 2] {
        // a1 = b1 x2 + c1 x1, a2 = b2 x1 - c2 x2
        let det = self.c1 * self.c2 + self.b1 * self.b2;
        let x1 = (self.a1 * self.c2 + self.b1 * self.a2) / det;
        let x2 = (self.b2 * self.a1 - self.c1 * self.a2) / det;
        [x1, x2]
    }
}

impl SdeModel {
    /// Model from arbitrary drift and diffusion closures.
    pub fn custom(
        name: impl Into<String>,
        dim: usize,
        noise_dim: usize,
        drift: FieldFn,
        diffusion: FieldFn,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            noise_dim,
            drift,
            diffusion,
            polynomial: None,
            analytic_spectrum: None,
        }
    }

    pub fn from_polynomials(name: impl Into<String>, poly: PolynomialSde) -> Result<Self> {
        let d = poly.dim();
        let l = poly.noise_dim;
        if d == 0 || l == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if poly.diffusion.len() != d * l {
            return Err(Error::DimensionMismatch {
                expected: d * l,
                got: poly.diffusion.len(),
            });
        }
        if poly
            .drift
            .iter()
            .chain(&poly.diffusion)
            .any(|p| p.dim() != d)
        {
            return Err(Error::Config(
                "polynomial dimension differs from state dimension".into(),
            ));
        }
        let drift_p = poly.drift.clone();
        let diff_p = poly.diffusion.clone();
        let drift: FieldFn = Arc::new(move |x, out| {
            for (o, p) in out.iter_mut().zip(&drift_p) {
                *o = p.eval(x);
            }
        });
        let diffusion: FieldFn = Arc::new(move |x, out| {
            for (o, p) in out.iter_mut().zip(&diff_p) {
                *o = p.eval(x);
            }
        });
        Ok(Self {
            name: name.into(),
            dim: d,
            noise_dim: l,
            drift,
            diffusion,
            polynomial: Some(poly),
            analytic_spectrum: None,
        })
    }

    /// `dX = μX dt + σ dW`; spectrum `{nμ}`.
    pub fn ornstein_uhlenbeck(mu: f64, sigma: f64) -> Self {
        let poly = PolynomialSde {
            drift: vec![Polynomial::coordinate(1, 0, mu)],
            diffusion: vec![Polynomial::constant(1, sigma)],
            noise_dim: 1,
        };
        let drift: FieldFn = Arc::new(move |x, out| out[0] = mu * x[0]);
        let diffusion: FieldFn = Arc::new(move |_x, out| out[0] = sigma);
        Self {
            name: "ornstein_uhlenbeck".into(),
            dim: 1,
            noise_dim: 1,
            drift,
            diffusion,
            polynomial: Some(poly),
            analytic_spectrum: Some(
                (1..=10)
                    .map(|n| Complex64::new(n as f64 * mu, 0.0))
                    .collect(),
            ),
        }
    }

    /// `dX = A X dt + B dW` with constant `B` (`d×l`).
    pub fn linear(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        let d = a.nrows();
        assert_eq!(a.ncols(), d, "drift matrix must be square");
        assert_eq!(b.nrows(), d, "diffusion rows must equal state dimension");
        let l = b.ncols().max(1);
        let drift = (0..d)
            .map(|r| {
                Polynomial::from_terms(
                    d,
                    (0..d).map(|c| {
                        let mut e = vec![0; d];
                        e[c] = 1;
                        (e, a[(r, c)])
                    }),
                )
            })
            .collect();
        let diffusion = (0..d)
            .flat_map(|r| {
                let b = &b;
                (0..l).map(move |c| {
                    Polynomial::constant(d, if c < b.ncols() { b[(r, c)] } else { 0.0 })
                })
            })
            .collect();
        let mut model = Self::from_polynomials(
            "linear",
            PolynomialSde {
                drift,
                diffusion,
                noise_dim: l,
            },
        )
        .expect("consistent linear model");
        let a2 = a.clone();
        model.drift = Arc::new(move |x, out| {
            for r in 0..d {
                out[r] = (0..d).map(|c| a2[(r, c)] * x[c]).sum();
            }
        });
        model
    }

    /// `f ≡ 0`, `b ≡ 0`.
    pub fn zero(dim: usize) -> Self {
        let mut m = Self::linear(DMatrix::zeros(dim, dim), DMatrix::zeros(dim, 1));
        m.name = "zero".into();
        m
    }

    pub fn lotka_volterra(p: LotkaVolterraParams) -> Self {
        let e = |a: u32, b: u32| vec![a, b];
        let drift = vec![
            Polynomial::from_terms(2, [(e(1, 0), p.a1), (e(1, 1), -p.b1), (e(2, 0), -p.c1)]),
            Polynomial::from_terms(2, [(e(0, 1), -p.a2), (e(1, 1), p.b2), (e(0, 2), -p.c2)]),
        ];
        let diffusion = vec![
            Polynomial::coordinate(2, 0, p.sigma1),
            Polynomial::zero(2),
            Polynomial::zero(2),
            Polynomial::coordinate(2, 1, p.sigma2),
        ];
        let drift_fn: FieldFn = Arc::new(move |x, out| {
            out[0] = (p.a1 - p.b1 * x[1] - p.c1 * x[0]) * x[0];
            out[1] = (-p.a2 + p.b2 * x[0] - p.c2 * x[1]) * x[1];
        });
        let diffusion_fn: FieldFn = Arc::new(move |x, out| {
            out[0] = p.sigma1 * x[0];
            out[1] = 0.0;
            out[2] = 0.0;
            out[3] = p.sigma2 * x[1];
        });
        Self {
            name: "lotka_volterra".into(),
            dim: 2,
            noise_dim: 2,
            drift: drift_fn,
            diffusion: diffusion_fn,
            polynomial: Some(PolynomialSde {
                drift,
                diffusion,
                noise_dim: 2,
            }),
            analytic_spectrum: Some(LotkaVolterraParams::PRINCIPAL_PAIR.to_vec()),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_analytic_spectrum(mut self, spectrum: Vec<Complex64>) -> Self {
        self.analytic_spectrum = Some(spectrum);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn polynomial_form(&self) -> Option<&PolynomialSde> {
        self.polynomial.as_ref()
    }

    pub fn analytic_spectrum(&self) -> Option<&[Complex64]> {
        self.analytic_spectrum.as_deref()
    }

    #[inline]
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    #[inline]
    pub fn diffusion_into(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out)
    }

    pub fn drift_at(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.drift_into(x, &mut out);
        out
    }

    pub fn diffusion_at(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = vec![0.0; self.dim * self.noise_dim];
        self.diffusion_into(x, &mut out);
        DMatrix::from_row_slice(self.dim, self.noise_dim, &out)
    }

    /// `b(x) b(x)ᵀ`
    pub fn covariance_at(&self, x: &[f64]) -> DMatrix<f64> {
        let b = self.diffusion_at(x);
        &b * b.transpose()
    }
}

/// Bounded region on which paths are stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    /// Open ball `|x| < radius` around the origin.
    Ball { radius: f64 },
    /// Open box `lo_i < x_i < hi_i`.
    Box { bounds: Vec<[f64; 2]> },
}

impl Domain {
    pub fn ball(radius: f64) -> Self {
        Domain::Ball { radius }
    }

    pub fn boxed(bounds: Vec<[f64; 2]>) -> Self {
        Domain::Box { bounds }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Domain::Ball { radius } if !(*radius > 0.0 && radius.is_finite()) => Err(
                Error::Config(format!("ball radius must be positive, got {radius}")),
            ),
            Domain::Ball { .. } => Ok(()),
            Domain::Box { bounds } => {
                if bounds.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: bounds.len(),
                    });
                }
                for [lo, hi] in bounds {
                    if !(lo < hi) {
                        return Err(Error::Config(format!("empty box side [{lo}, {hi}]")));
                    }
                }
                Ok(())
            }
        }
    }

    /// Strict interior membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Domain::Ball { radius } => x.iter().map(|v| v * v).sum::<f64>() < radius * radius,
            Domain::Box { bounds } => x.iter().zip(bounds).all(|(&v, &[lo, hi])| lo < v && v < hi),
        }
    }

    /// Distance from `x` to `∂X` (zero on the boundary).
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        match self {
            Domain::Ball { radius } => (x.iter().map(|v| v * v).sum::<f64>().sqrt() - radius).abs(),
            Domain::Box { bounds } => {
                if self.contains(x) {
                    x.iter()
                        .zip(bounds)
                        .map(|(&v, &[lo, hi])| (v - lo).min(hi - v))
                        .fold(f64::INFINITY, f64::min)
                } else {
                    let outside: f64 = x
                        .iter()
                        .zip(bounds)
                        .map(|(&v, &[lo, hi])| {
                            let e = (lo - v).max(v - hi).max(0.0);
                            e * e
                        })
                        .sum::<f64>()
                        .sqrt();
                    if outside > 0.0 {
                        outside
                    } else {
                        x.iter()
                            .zip(bounds)
                            .map(|(&v, &[lo, hi])| (v - lo).abs().min((hi - v).abs()))
                            .fold(f64::INFINITY, f64::min)
                    }
                }
            }
        }
    }

    /// Point where the segment from interior `p` to exterior `q` meets `∂X`.
    pub fn crossing(&self, p: &[f64], q: &[f64]) -> Vec<f64> {
        match self {
            Domain::Ball { radius } => {
                let r = *radius;
                let dir: Vec<f64> = q.iter().zip(p).map(|(a, b)| a - b).collect();
                let a: f64 = dir.iter().map(|v| v * v).sum();
                let b: f64 = p.iter().zip(&dir).map(|(x, v)| x * v).sum();
                let c: f64 = p.iter().map(|v| v * v).sum::<f64>() - r * r;
                let disc = b * b - a * c;
                let s = if a > 0.0 && disc >= 0.0 {
                    (-b + disc.sqrt()) / a
                } else {
                    f64::NAN
                };
                let point: Vec<f64> = if (0.0..=1.0).contains(&s) {
                    p.iter().zip(&dir).map(|(x, v)| x + s * v).collect()
                } else {
                    q.to_vec()
                };
                // radial snap onto the sphere; also the fallback when no root lies in [0, 1]
                let norm = point.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    point.iter().map(|v| v * r / norm).collect()
                } else {
                    point
                }
            }
            Domain::Box { bounds } => {
                let mut s_min = 1.0_f64;
                let mut hit: Option<(usize, f64)> = None;
                for (i, &[lo, hi]) in bounds.iter().enumerate() {
                    let bound = if q[i] <= lo {
                        lo
                    } else if q[i] >= hi {
                        hi
                    } else {
                        continue;
                    };
                    let den = q[i] - p[i];
                    let s = if den != 0.0 {
                        (bound - p[i]) / den
                    } else {
                        0.0
                    };
                    let s = s.clamp(0.0, 1.0);
                    if hit.is_none() || s < s_min {
                        s_min = s;
                        hit = Some((i, bound));
                    }
                }
                let mut point: Vec<f64> =
                    p.iter().zip(q).map(|(a, b)| a + s_min * (b - a)).collect();
                if let Some((i, bound)) = hit {
                    point[i] = bound;
                }
                point
            }
        }
    }
}

/// Stop index and boundary value of one observed path.
#[derive(Debug, Clone, PartialEq)]
pub struct StopOutcome {
    /// First snapshot outside the domain, or `Γ` if the path never leaves.
    pub stop_index: usize,
    /// Interpolated crossing when the path exits.
    pub stopped_value: Option<Vec<f64>>,
}

/// Discrete exit detection with linear interpolation onto `∂X`.
pub fn apply_stopping(raw_path: &[Vec<f64>], domain: &Domain) -> StopOutcome {
    let last = raw_path.len().saturating_sub(1);
    for k in 1..raw_path.len() {
        if !domain.contains(&raw_path[k]) {
            return StopOutcome {
                stop_index: k,
                stopped_value: Some(domain.crossing(&raw_path[k - 1], &raw_path[k])),
            };
        }
    }
    StopOutcome {
        stop_index: last,
        stopped_value: None,
    }
}

/// How Wiener increments are shared between initial states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSharing {
    /// Path `j` is driven by the same realization `ω_j` for every initial
    /// state; the substream is keyed by `(seed, j)`.
    #[default]
    PerRealization,
    /// Every `(i, j)` path has its own substream keyed by `(seed, i, j)`.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// `T`, observation window length.
    pub horizon: f64,
    /// `γ`, observations per unit time.
    pub rate: f64,
    pub substeps: usize,
    pub seed: u64,
    #[serde(default)]
    pub noise: NoiseSharing,
}

impl SimConfig {
    pub fn new(horizon: f64, rate: f64, seed: u64) -> Self {
        Self {
            horizon,
            rate,
            substeps: 1,
            seed,
            noise: NoiseSharing::PerRealization,
        }
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps;
        self
    }

    pub fn with_noise(mut self, noise: NoiseSharing) -> Self {
        self.noise = noise;
        self
    }

    /// Number of observation intervals `Γ = γT`; rejects non-integral products.
    pub fn intervals(&self) -> Result<usize> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::Config(format!(
                "rate must be positive, got {}",
                self.rate
            )));
        }
        if self.substeps == 0 {
            return Err(Error::Config(
                "substeps_per_observation must be at least 1".into(),
            ));
        }
        intervals_for(self.rate, self.horizon)
    }

    pub fn observation_step(&self) -> f64 {
        1.0 / self.rate
    }

    pub fn integration_step(&self) -> f64 {
        1.0 / (self.rate * self.substeps as f64)
    }

    /// `t_k = k/γ`
    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.rate
    }
}

/// `γT` as an integer, or a config error if it is not one.
pub fn intervals_for(rate: f64, horizon: f64) -> Result<usize> {
    let g = rate * horizon;
    let r = g.round();
    if r < 1.0 || (g - r).abs() > 1e-9 * g.max(1.0) {
        return Err(Error::Config(format!(
            "rate × horizon = {g} is not a positive integer snapshot count"
        )));
    }
    Ok(r as usize)
}

/// `m` initial states × `J` stopped paths × `Γ+1` snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEnsemble {
    dim: usize,
    initial_states: Vec<Vec<f64>>,
    paths_per_state: usize,
    snapshots: usize,
    /// Flattened `[i][j][k][d]`; values at and after the exit snapshot are
    /// the interpolated boundary point.
    states: Vec<f64>,
    /// First snapshot outside the domain, per `[i][j]`.
    exit_index: Vec<Option<usize>>,
    config: SimConfig,
}

impl TrajectoryEnsemble {
    /// Assemble an ensemble from already-stopped data.
    pub fn from_parts(
        initial_states: Vec<Vec<f64>>,
        paths_per_state: usize,
        snapshots: usize,
        states: Vec<f64>,
        exit_index: Vec<Option<usize>>,
        config: SimConfig,
    ) -> Result<Self> {
        let m = initial_states.len();
        if m == 0 || paths_per_state == 0 || snapshots < 2 {
            return Err(Error::Config(
                "ensemble needs m ≥ 1, J ≥ 1 and Γ ≥ 1".into(),
            ));
        }
        let dim = initial_states[0].len();
        if initial_states.iter().any(|x| x.len() != dim) {
            return Err(Error::Config(
                "initial states have inconsistent dimensions".into(),
            ));
        }
        if states.len() != m * paths_per_state * snapshots * dim {
            return Err(Error::DimensionMismatch {
                expected: m * paths_per_state * snapshots * dim,
                got: states.len(),
            });
        }
        if exit_index.len() != m * paths_per_state {
            return Err(Error::DimensionMismatch {
                expected: m * paths_per_state,
                got: exit_index.len(),
            });
        }
        Ok(Self {
            dim,
            initial_states,
            paths_per_state,
            snapshots,
            states,
            exit_index,
            config,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn initial_states(&self) -> &[Vec<f64>] {
        &self.initial_states
    }

    pub fn num_initial(&self) -> usize {
        self.initial_states.len()
    }

    pub fn paths_per_state(&self) -> usize {
        self.paths_per_state
    }

    /// `Γ + 1`
    pub fn snapshots(&self) -> usize {
        self.snapshots
    }

    /// `Γ`
    pub fn intervals(&self) -> usize {
        self.snapshots - 1
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn time(&self, k: usize) -> f64 {
        self.config.time(k)
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        ((i * self.paths_per_state + j) * self.snapshots + k) * self.dim
    }

    /// Stopped state `X_{i,j}(t_k ∧ τ)`.
    #[inline]
    pub fn state(&self, i: usize, j: usize, k: usize) -> &[f64] {
        let o = self.offset(i, j, k);
        &self.states[o..o + self.dim]
    }

    /// All snapshots of path `(i, j)`, flattened `[k][d]`.
    pub fn path(&self, i: usize, j: usize) -> &[f64] {
        let o = self.offset(i, j, 0);
        &self.states[o..o + self.snapshots * self.dim]
    }

    pub fn exit_index(&self, i: usize, j: usize) -> Option<usize> {
        self.exit_index[i * self.paths_per_state + j]
    }

    /// Exit snapshot, or `Γ` for paths that stay inside.
    pub fn stop_index(&self, i: usize, j: usize) -> usize {
        self.exit_index(i, j).unwrap_or(self.intervals())
    }

    pub fn stopped_value(&self, i: usize, j: usize) -> Option<&[f64]> {
        self.exit_index(i, j).map(|k| self.state(i, j, k))
    }

    /// True when snapshot `k` of path `(i, j)` is still before the exit.
    #[inline]
    pub fn alive_at(&self, i: usize, j: usize, k: usize) -> bool {
        self.exit_index(i, j).is_none_or(|e| k < e)
    }

    /// Fraction of paths that leave the domain within the horizon.
    pub fn exit_fraction(&self) -> f64 {
        self.exit_index.iter().filter(|e| e.is_some()).count() as f64 / self.exit_index.len() as f64
    }

    /// Columnar CSV: `i,j,k,t,x_1..x_d,stopped_flag`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "i,j,k,t")?;
        for c in 1..=self.dim {
            write!(w, ",x_{c}")?;
        }
        writeln!(w, ",stopped_flag")?;
        for i in 0..self.num_initial() {
            for j in 0..self.paths_per_state {
                for k in 0..self.snapshots {
                    write!(w, "{i},{j},{k},{:?}", self.time(k))?;
                    for v in self.state(i, j, k) {
                        write!(w, ",{v:?}")?;
                    }
                    writeln!(w, ",{}", u8::from(!self.alive_at(i, j, k)))?;
                }
            }
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path.as_ref(), e))
    }

    /// Lossless JSON dump.
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self).map_err(|e| Error::Parse {
            path: path.as_ref().display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| Error::Parse {
            path: path.as_ref().display().to_string(),
            message: e.to_string(),
        })
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-path scratch for one Euler–Maruyama integration.
struct Stepper<'a> {
    model: &'a SdeModel,
    dt: f64,
    sqrt_dt: f64,
    f: Vec<f64>,
    b: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a SdeModel, dt: f64) -> Self {
        Self {
            model,
            dt,
            sqrt_dt: dt.sqrt(),
            f: vec![0.0; model.dim()],
            b: vec![0.0; model.dim() * model.noise_dim()],
        }
    }

    /// `x ← x + f(x)Δt + b(x)√Δt ξ`
    #[inline]
    fn step(&mut self, x: &mut [f64], xi: &[f64]) {
        let l = self.model.noise_dim();
        self.model.drift_into(x, &mut self.f);
        self.model.diffusion_into(x, &mut self.b);
        for r in 0..x.len() {
            let noise: f64 = (0..l).map(|c| self.b[r * l + c] * xi[c]).sum();
            x[r] += self.f[r] * self.dt + noise * self.sqrt_dt;
        }
    }
}

/// Integrates one path given a source of standard normals and writes the
/// stopped snapshots into `out` (`(Γ+1)·d` values).
fn integrate_path(
    model: &SdeModel,
    domain: &Domain,
    x0: &[f64],
    config: &SimConfig,
    intervals: usize,
    mut normals: impl FnMut(&mut [f64]),
    out: &mut [f64],
    (i, j): (usize, usize),
) -> Result<Option<usize>> {
    let d = model.dim();
    let mut stepper = Stepper::new(model, config.integration_step());
    let mut x = x0.to_vec();
    let mut prev = x0.to_vec();
    let mut xi = vec![0.0; model.noise_dim()];
    out[..d].copy_from_slice(x0);
    for k in 1..=intervals {
        prev.copy_from_slice(&x);
        for s in 0..config.substeps {
            normals(&mut xi);
            stepper.step(&mut x, &xi);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::IntegrationDiverged {
                    i,
                    j,
                    step: (k - 1) * config.substeps + s + 1,
                });
            }
        }
        if !domain.contains(&x) {
            let hit = domain.crossing(&prev, &x);
            for kk in k..=intervals {
                out[kk * d..(kk + 1) * d].copy_from_slice(&hit);
            }
            return Ok(Some(k));
        }
        out[k * d..(k + 1) * d].copy_from_slice(&x);
    }
    Ok(None)
}

/// Euler–Maruyama sample paths from every initial state, stopped at `∂X`.
///
/// Deterministic in `config.seed`: each noise substream is keyed by
/// `(seed, j)` or `(seed, i, j)` (see [`NoiseSharing`]), so the result does
/// not depend on the thread schedule.
pub fn simulate_paths(
    model: &SdeModel,
    domain: &Domain,
    initial_states: &[Vec<f64>],
    paths_per_state: usize,
    config: &SimConfig,
) -> Result<TrajectoryEnsemble> {
    let intervals = config.intervals()?;
    let d = model.dim();
    domain.validate(d)?;
    if paths_per_state == 0 {
        return Err(Error::Config(
            "need at least one path per initial state".into(),
        ));
    }
    if initial_states.is_empty() {
        return Err(Error::Config("need at least one initial state".into()));
    }
    for (i, x) in initial_states.iter().enumerate() {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        if !domain.contains(x) {
            return Err(Error::Config(format!(
                "initial state {i} ({x:?}) is not strictly inside the domain"
            )));
        }
    }
    let m = initial_states.len();
    let snaps = intervals + 1;
    let path_len = snaps * d;
    let l = model.noise_dim();
    let draws_per_path = intervals * config.substeps * l;

    let (states, exits) = match config.noise {
        NoiseSharing::PerRealization => {
            // [j] -> m paths, then transpose to [i][j]
            let per_j: Vec<(Vec<f64>, Vec<Option<usize>>)> = (0..paths_per_state)
                .into_par_iter()
                .map(|j| {
                    let mut rng = stream_rng(config.seed, j as u64);
                    let increments: Vec<f64> = (0..draws_per_path)
                        .map(|_| StandardNormal.sample(&mut rng))
                        .collect();
                    let mut buf = vec![0.0; m * path_len];
                    let mut exits = Vec::with_capacity(m);
                    for (i, x0) in initial_states.iter().enumerate() {
                        let mut cursor = 0;
                        let exit = integrate_path(
                            model,
                            domain,
                            x0,
                            config,
                            intervals,
                            |xi| {
                                xi.copy_from_slice(&increments[cursor..cursor + l]);
                                cursor += l;
                            },
                            &mut buf[i * path_len..(i + 1) * path_len],
                            (i, j),
                        )?;
                        exits.push(exit);
                    }
                    Ok((buf, exits))
                })
                .collect::<Result<_>>()?;
            let mut states = vec![0.0; m * paths_per_state * path_len];
            let mut exits = vec![None; m * paths_per_state];
            for (j, (buf, ex)) in per_j.into_iter().enumerate() {
                for i in 0..m {
                    let dst = (i * paths_per_state + j) * path_len;
                    states[dst..dst + path_len]
                        .copy_from_slice(&buf[i * path_len..(i + 1) * path_len]);
                    exits[i * paths_per_state + j] = ex[i];
                }
            }
            (states, exits)
        }
        NoiseSharing::Independent => {
            let per_path: Vec<(Vec<f64>, Option<usize>)> = (0..m * paths_per_state)
                .into_par_iter()
                .map(|idx| {
                    let (i, j) = (idx / paths_per_state, idx % paths_per_state);
                    let mut rng = stream_rng(config.seed, ((i as u64) << 32) | j as u64);
                    let mut buf = vec![0.0; path_len];
                    let exit = integrate_path(
                        model,
                        domain,
                        &initial_states[i],
                        config,
                        intervals,
                        |xi| {
                            for v in xi.iter_mut() {
                                *v = StandardNormal.sample(&mut rng);
                            }
                        },
                        &mut buf,
                        (i, j),
                    )?;
                    Ok((buf, exit))
                })
                .collect::<Result<_>>()?;
            let mut states = Vec::with_capacity(m * paths_per_state * path_len);
            let mut exits = Vec::with_capacity(m * paths_per_state);
            for (buf, e) in per_path {
                states.extend_from_slice(&buf);
                exits.push(e);
            }
            (states, exits)
        }
    };

    TrajectoryEnsemble::from_parts(
        initial_states.to_vec(),
        paths_per_state,
        snaps,
        states,
        exits,
        config.clone(),
    )
}
