//! Benchmark workloads built from the shipped experiment configurations.

use std::path::PathBuf;

use rtedmd_core::experiments::{simulate_trial, trial_seeds, ExperimentConfig};
use rtedmd_core::{Dictionary, Result, SdeModel, TrajectoryEnsemble};

pub struct Workload {
    pub config: ExperimentConfig,
    pub model: SdeModel,
    pub dictionary: Dictionary,
    pub ensemble: TrajectoryEnsemble,
}

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

/// One trial of `configs/<name>` at `rate` with `paths` samples per state.
pub fn workload(name: &str, rate: f64, paths: usize) -> Result<Workload> {
    let config = ExperimentConfig::load(config_path(name))?;
    let model = config.model.build();
    let dictionary = config.dictionary.build(model.dim())?;
    let ensemble = simulate_trial(&config, &model, rate, paths, trial_seeds(config.seed, 0))?;
    Ok(Workload {
        config,
        model,
        dictionary,
        ensemble,
    })
}
