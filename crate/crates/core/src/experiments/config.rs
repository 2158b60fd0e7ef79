//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::polynomial::Exponents;
use crate::sde::{Domain, LotkaVolterraParams, NoiseSharing, SdeModel, SimConfig};
use crate::spectral::MatchStrategy;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "RTEDMD_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "rtedmd-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub model: ModelConfig,
    pub domain: Domain,
    pub dictionary: DictionaryConfig,
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub estimators: EstimatorConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub sysid: Option<SysidConfig>,
    #[serde(default)]
    pub ablation: Option<AblationConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    OrnsteinUhlenbeck { mu: f64, sigma: f64 },
    LotkaVolterra(LvConfig),
}

/// Lotka–Volterra parameters; omitted entries take the standard values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LvConfig {
    pub a1: f64,
    pub b1: f64,
    pub c1: f64,
    pub a2: f64,
    pub b2: f64,
    pub c2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl Default for LvConfig {
    fn default() -> Self {
        let p = LotkaVolterraParams::default();
        Self {
            a1: p.a1,
            b1: p.b1,
            c1: p.c1,
            a2: p.a2,
            b2: p.b2,
            c2: p.c2,
            sigma1: p.sigma1,
            sigma2: p.sigma2,
        }
    }
}

impl From<&LvConfig> for LotkaVolterraParams {
    fn from(c: &LvConfig) -> Self {
        LotkaVolterraParams {
            a1: c.a1,
            b1: c.b1,
            c1: c.c1,
            a2: c.a2,
            b2: c.b2,
            c2: c.c2,
            sigma1: c.sigma1,
            sigma2: c.sigma2,
        }
    }
}

impl ModelConfig {
    pub fn build(&self) -> SdeModel {
        match self {
            ModelConfig::OrnsteinUhlenbeck { mu, sigma } => {
                SdeModel::ornstein_uhlenbeck(*mu, *sigma)
            }
            ModelConfig::LotkaVolterra(p) => SdeModel::lotka_volterra(p.into()),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelConfig::OrnsteinUhlenbeck { .. } => 1,
            ModelConfig::LotkaVolterra(_) => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::OrnsteinUhlenbeck { .. } => "ornstein_uhlenbeck",
            ModelConfig::LotkaVolterra(_) => "lotka_volterra",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionaryConfig {
    #[serde(default)]
    pub max_degree: Option<u32>,
    #[serde(default)]
    pub include_constant: bool,
    /// Explicit exponent vectors; overrides `max_degree`.
    #[serde(default)]
    pub exponents: Option<Vec<Exponents>>,
}

impl DictionaryConfig {
    pub fn monomials(max_degree: u32, include_constant: bool) -> Self {
        Self {
            max_degree: Some(max_degree),
            include_constant,
            exponents: None,
        }
    }

    pub fn build(&self, dim: usize) -> Result<Dictionary> {
        match (&self.exponents, self.max_degree) {
            (Some(e), _) => Dictionary::from_exponents(dim, e.clone()),
            (None, Some(p)) if p >= 1 => Ok(Dictionary::monomials_up_to_degree(
                dim,
                p,
                self.include_constant,
            )),
            _ => Err(Error::Config(
                "dictionary needs `exponents` or `max_degree >= 1`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    #[default]
    Uniform,
    /// Evenly spaced points including the end points, tensorized across dimensions.
    Linspace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub count: usize,
    /// `[lo, hi]` per dimension.
    pub region: Vec<[f64; 2]>,
    #[serde(default)]
    pub layout: Layout,
}

impl InitialConfig {
    pub fn sample(&self, seed: u64) -> Result<Vec<Vec<f64>>> {
        if self.count == 0 {
            return Err(Error::Config("initial point count must be positive".into()));
        }
        for [lo, hi] in &self.region {
            if !(lo <= hi) {
                return Err(Error::Config(format!("empty initial region [{lo}, {hi}]")));
            }
        }
        match self.layout {
            Layout::Uniform => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok((0..self.count)
                    .map(|_| {
                        self.region
                            .iter()
                            .map(|&[lo, hi]| {
                                if lo == hi {
                                    lo
                                } else {
                                    rng.random_range(lo..hi)
                                }
                            })
                            .collect()
                    })
                    .collect())
            }
            Layout::Linspace => {
                let axes: Vec<Vec<f64>> = self
                    .region
                    .iter()
                    .map(|&[lo, hi]| {
                        if self.count == 1 {
                            vec![0.5 * (lo + hi)]
                        } else {
                            (0..self.count)
                                .map(|k| lo + (hi - lo) * k as f64 / (self.count - 1) as f64)
                                .collect()
                        }
                    })
                    .collect();
                let mut points = vec![Vec::new()];
                for axis in &axes {
                    points = points
                        .into_iter()
                        .flat_map(|p| {
                            axis.iter().map(move |&v| {
                                let mut q = p.clone();
                                q.push(v);
                                q
                            })
                        })
                        .collect();
                }
                Ok(points)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub initial: InitialConfig,
    pub paths_per_state: usize,
    pub horizon: f64,
    /// Target Euler–Maruyama step; the observation interval is split into
    /// `max(1, round(1/(γ·step)))` substeps. Unset means one step per snapshot.
    #[serde(default)]
    pub integration_step: Option<f64>,
    #[serde(default)]
    pub noise: NoiseSharing,
}

impl SamplingConfig {
    pub fn substeps(&self, rate: f64) -> usize {
        match self.integration_step {
            Some(h) if h > 0.0 => ((1.0 / (rate * h)).round() as usize).max(1),
            _ => 1,
        }
    }

    pub fn sim_config(&self, rate: f64, seed: u64) -> SimConfig {
        SimConfig::new(self.horizon, rate, seed)
            .with_substeps(self.substeps(rate))
            .with_noise(self.noise)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rt,
    RtMod,
    Edmd,
    Gedmd,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Rt, Method::RtMod, Method::Edmd, Method::Gedmd];

    pub fn id(&self) -> &'static str {
        match self {
            Method::Rt => "rt",
            Method::RtMod => "rt_mod",
            Method::Edmd => "edmd",
            Method::Gedmd => "gedmd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method '{s}' (expected rt, rt_mod, edmd or gedmd)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RtParams {
    pub lambda: f64,
    /// Defaults to the sampling horizon.
    #[serde(default)]
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RtModParams {
    pub lambda: f64,
    pub mu: f64,
    #[serde(default)]
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub methods: Vec<Method>,
    /// Snapshot lag of the finite-lag baselines.
    pub lag_steps: usize,
    pub rt: RtParams,
    pub rt_mod: RtModParams,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            lag_steps: 1,
            rt: RtParams {
                lambda: 20.0,
                horizon: None,
            },
            rt_mod: RtModParams {
                lambda: 1e6,
                mu: 6.0,
                horizon: None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub frequencies: Vec<f64>,
    /// Values of `J`; empty means `sampling.paths_per_state` only.
    pub paths_per_state: Vec<usize>,
    pub trials: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            frequencies: vec![100.0],
            paths_per_state: Vec::new(),
            trials: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    /// Number of reference eigenvalues matched; defaults to
    /// `min(reference length, dictionary size)`.
    pub n_match: Option<usize>,
    pub matching: MatchStrategy,
    /// `[re, im]` pairs; defaults to the model's analytic spectrum.
    pub reference: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SysidConfig {
    pub dictionary: DictionaryConfig,
    #[serde(default = "default_sysid_method")]
    pub method: Method,
    /// Sampling rate of the identification data; defaults to the first sweep frequency.
    #[serde(default)]
    pub frequency: Option<f64>,
    #[serde(default)]
    pub reconstruction: ReconstructionConfig,
}

fn default_sysid_method() -> Method {
    Method::RtMod
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    pub horizon: f64,
    /// How many of the sampled initial states are reconstructed.
    pub states: usize,
    pub paths_per_state: usize,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            horizon: 5.0,
            states: 5,
            paths_per_state: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub lambdas: Vec<f64>,
    pub frequency: f64,
    pub dictionary: DictionaryConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.model.dim();
        self.domain.validate(d)?;
        self.dictionary.build(d)?;
        if self.sampling.initial.region.len() != d {
            return Err(Error::Config(format!(
                "initial region has {} dimensions, model has {d}",
                self.sampling.initial.region.len()
            )));
        }
        if self.sampling.paths_per_state == 0 || self.sweep.paths_per_state.contains(&0) {
            return Err(Error::Config("paths_per_state must be at least 1".into()));
        }
        if self.sweep.trials == 0 {
            return Err(Error::Config("trial count must be at least 1".into()));
        }
        if self.sweep.frequencies.is_empty() || self.sweep.frequencies.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::Config(
                "frequencies must be a non-empty list of positive rates".into(),
            ));
        }
        if self.estimators.methods.is_empty() {
            return Err(Error::Config("no estimators selected".into()));
        }
        if self.estimators.lag_steps == 0 {
            return Err(Error::Config("lag_steps must be at least 1".into()));
        }
        for f in &self.sweep.frequencies {
            self.sampling.sim_config(*f, 0).intervals()?;
        }
        if let Some(s) = &self.sysid {
            s.dictionary.build(d)?;
        }
        if let Some(a) = &self.ablation {
            a.dictionary.build(d)?;
            if a.lambdas.is_empty() || a.lambdas.iter().any(|l| !(*l > 0.0)) {
                return Err(Error::Config("ablation lambdas must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn j_values(&self) -> Vec<usize> {
        if self.sweep.paths_per_state.is_empty() {
            vec![self.sampling.paths_per_state]
        } else {
            self.sweep.paths_per_state.clone()
        }
    }

    /// Reference eigenvalues for scoring.
    pub fn reference_spectrum(&self) -> Result<Vec<Complex64>> {
        if let Some(r) = &self.spectrum.reference {
            return Ok(r.iter().map(|&[re, im]| Complex64::new(re, im)).collect());
        }
        self.model
            .build()
            .analytic_spectrum()
            .map(|s| s.to_vec())
            .ok_or_else(|| {
                Error::Config("model has no analytic spectrum; set spectrum.reference".into())
            })
    }

    pub fn n_match(&self, dict_len: usize) -> Result<usize> {
        let reference = self.reference_spectrum()?.len();
        Ok(self.spectrum.n_match.unwrap_or(reference.min(dict_len)))
    }

    /// Output directory: explicit override, then the config, then the
    /// environment, then a fixed default.
    pub fn resolve_output_dir(&self, overridden: Option<&Path>) -> PathBuf {
        match (overridden, &self.output_dir) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(p)) => p.clone(),
            (None, None) => Self::default_output_dir(None),
        }
    }

    /// Output directory without a config: override, environment, default.
    pub fn default_output_dir(overridden: Option<&Path>) -> PathBuf {
        if let Some(p) = overridden {
            return p.to_path_buf();
        }
        match std::env::var_os(OUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => PathBuf::from(DEFAULT_OUT_DIR),
        }
    }
}
