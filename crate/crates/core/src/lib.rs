//! Generator estimation for polynomial SDEs from stopped sample paths.

pub mod baselines;
pub mod dictionary;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod generator;
pub mod linalg;
pub mod polynomial;
pub mod sde;
pub mod spectral;
pub mod sysid;

pub use dictionary::Dictionary;
pub use error::{Error, Result};
pub use generator::{GeneratorMatrix, Provenance};
pub use polynomial::Polynomial;
pub use sde::{
    apply_stopping, simulate_paths, Domain, LotkaVolterraParams, NoiseSharing, PolynomialSde,
    SdeModel, SimConfig, TrajectoryEnsemble,
};
