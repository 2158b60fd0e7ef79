//! The learned generator matrix and its on-disk format.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};

/// Which estimator produced a matrix, with the parameters it used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Provenance {
    RtEdmd {
        lambda: f64,
        horizon: f64,
    },
    RtEdmdModified {
        lambda: f64,
        mu: f64,
        horizon: f64,
    },
    /// Resolvent estimator built from paths that have not exited (ablation only).
    RtEdmdFiltered {
        lambda: f64,
        horizon: f64,
    },
    EdmdKlm {
        lag: f64,
    },
    GedmdFdm {
        lag: f64,
    },
    Analytic,
}

impl Provenance {
    /// Short method id used in file names and CLI flags.
    pub fn method_id(&self) -> &'static str {
        match self {
            Provenance::RtEdmd { .. } => "rt",
            Provenance::RtEdmdModified { .. } => "rt_mod",
            Provenance::RtEdmdFiltered { .. } => "rt_filtered",
            Provenance::EdmdKlm { .. } => "edmd",
            Provenance::GedmdFdm { .. } => "gedmd",
            Provenance::Analytic => "analytic",
        }
    }
}

/// `N×N` matrix `L` representing the generator on the dictionary span.
///
/// Convention: `𝓛 z_n ≈ Σ_m L[m, n] z_m`, i.e. for `h = Z_N θ` we have
/// `𝓛h ≈ Z_N (L θ)`, which is what the least-squares fit `Y ≈ X L` yields.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    entries: DMatrix<f64>,
    dictionary: Dictionary,
    provenance: Provenance,
}

impl GeneratorMatrix {
    pub fn new(
        entries: DMatrix<f64>,
        dictionary: Dictionary,
        provenance: Provenance,
    ) -> Result<Self> {
        let n = dictionary.len();
        if entries.nrows() != n || entries.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: if entries.nrows() != n {
                    entries.nrows()
                } else {
                    entries.ncols()
                },
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "{} generator matrix has non-finite entries",
                provenance.method_id()
            )));
        }
        Ok(Self {
            entries,
            dictionary,
            provenance,
        })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dictionary
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&GeneratorFile::from(self)).expect("generator serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GeneratorFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<generator>".into(),
            message: e.to_string(),
        })?;
        file.try_into()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text =
            std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                path: path.as_ref().display().to_string(),
                message,
            },
            other => other,
        })
    }
}

pub const GENERATOR_FORMAT: &str = "rtedmd-generator/1";

/// Serialized generator: dictionary exponents, provenance with its
/// parameters, and row-major entries at full precision.
#[derive(Debug, Serialize, Deserialize)]
struct GeneratorFile {
    format: String,
    provenance: Provenance,
    dictionary: Dictionary,
    observables: Vec<String>,
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl From<&GeneratorMatrix> for GeneratorFile {
    fn from(g: &GeneratorMatrix) -> Self {
        let (rows, cols) = g.entries.shape();
        let mut entries = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                entries.push(g.entries[(r, c)]);
            }
        }
        GeneratorFile {
            format: GENERATOR_FORMAT.into(),
            provenance: g.provenance.clone(),
            dictionary: g.dictionary.clone(),
            observables: g.dictionary.names(),
            rows,
            cols,
            entries,
        }
    }
}

impl TryFrom<GeneratorFile> for GeneratorMatrix {
    type Error = Error;
    fn try_from(f: GeneratorFile) -> Result<Self> {
        if f.format != GENERATOR_FORMAT {
            return Err(Error::Parse {
                path: "<generator>".into(),
                message: format!("unsupported format '{}'", f.format),
            });
        }
        if f.entries.len() != f.rows * f.cols {
            return Err(Error::Parse {
                path: "<generator>".into(),
                message: format!(
                    "expected {} entries, found {}",
                    f.rows * f.cols,
                    f.entries.len()
                ),
            });
        }
        let m = DMatrix::from_row_slice(f.rows, f.cols, &f.entries);
        GeneratorMatrix::new(m, f.dictionary, f.provenance)
    }
}
