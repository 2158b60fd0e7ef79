//! Per-trial records, boxplot summaries and CSV emission.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Outcome of one method on one simulated data set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub method: String,
    pub frequency: f64,
    pub paths_per_state: usize,
    pub trial: usize,
    pub seed: u64,
    pub outcome: TrialOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialOutcome {
    Scored {
        mae: f64,
        /// `(reference, estimate)` for each matched pair.
        pairs: Vec<(Complex64, Complex64)>,
        /// Estimated eigenvalues left out of the matching.
        unmatched: Vec<Complex64>,
    },
    /// Quarantined failure with its message.
    Failed(String),
}

impl TrialRecord {
    pub fn mae(&self) -> Option<f64> {
        match &self.outcome {
            TrialOutcome::Scored { mae, .. } => Some(*mae),
            TrialOutcome::Failed(_) => None,
        }
    }
}

/// Five-number summary with 1.5·IQR whiskers.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxStats {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Most extreme observations inside `[q1 − 1.5·IQR, q3 + 1.5·IQR]`.
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        let mut v: Vec<f64> = values.iter().cloned().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let q1 = quantile(&v, 0.25);
        let median = quantile(&v, 0.5);
        let q3 = quantile(&v, 0.75);
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside: Vec<f64> = v
            .iter()
            .cloned()
            .filter(|x| *x >= lo_fence && *x <= hi_fence)
            .collect();
        Some(Self {
            count: v.len(),
            min: v[0],
            q1,
            median,
            q3,
            max: v[v.len() - 1],
            whisker_low: inside.first().cloned().unwrap_or(q1),
            whisker_high: inside.last().cloned().unwrap_or(q3),
            outliers: v
                .iter()
                .cloned()
                .filter(|x| *x < lo_fence || *x > hi_fence)
                .collect(),
        })
    }
}

/// All trial records of a sweep, in execution order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepReport {
    pub records: Vec<TrialRecord>,
}

/// `(method, frequency, J)`
pub type GroupKey = (String, f64, usize);

impl SweepReport {
    /// Groups in first-seen order.
    pub fn groups(&self) -> Vec<GroupKey> {
        let mut keys: Vec<GroupKey> = Vec::new();
        for r in &self.records {
            let k = (r.method.clone(), r.frequency, r.paths_per_state);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys
    }

    pub fn maes(&self, method: &str, frequency: f64, paths_per_state: usize) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| {
                r.method == method
                    && r.frequency == frequency
                    && r.paths_per_state == paths_per_state
            })
            .filter_map(|r| r.mae())
            .collect()
    }

    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.mae().is_none()).count()
    }

    pub fn stats(&self, method: &str, frequency: f64, paths_per_state: usize) -> Option<BoxStats> {
        BoxStats::from_values(&self.maes(method, frequency, paths_per_state))
    }

    pub fn median(&self, method: &str, frequency: f64, paths_per_state: usize) -> Option<f64> {
        self.stats(method, frequency, paths_per_state)
            .map(|s| s.median)
    }

    pub fn mae_summary_csv(&self) -> String {
        let mut s = String::from("method,frequency,paths_per_state,trial,seed,mae,status\n");
        for r in &self.records {
            let (mae, status) = match &r.outcome {
                TrialOutcome::Scored { mae, .. } => (format!("{mae:?}"), "ok".to_string()),
                TrialOutcome::Failed(msg) => (String::new(), format!("failed: {}", csv_text(msg))),
            };
            let _ = writeln!(
                s,
                "{},{:?},{},{},{},{},{}",
                r.method, r.frequency, r.paths_per_state, r.trial, r.seed, mae, status
            );
        }
        s
    }

    pub fn boxplot_csv(&self) -> String {
        let mut s = String::from(
            "method,frequency,paths_per_state,count,failed,min,q1,median,q3,max,whisker_low,whisker_high,outliers\n",
        );
        for (method, freq, j) in self.groups() {
            let failed = self
                .records
                .iter()
                .filter(|r| {
                    r.method == method
                        && r.frequency == freq
                        && r.paths_per_state == j
                        && r.mae().is_none()
                })
                .count();
            match self.stats(&method, freq, j) {
                Some(b) => {
                    let outliers: Vec<String> =
                        b.outliers.iter().map(|v| format!("{v:?}")).collect();
                    let _ = writeln!(
                        s,
                        "{method},{freq:?},{j},{},{failed},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{}",
                        b.count,
                        b.min,
                        b.q1,
                        b.median,
                        b.q3,
                        b.max,
                        b.whisker_low,
                        b.whisker_high,
                        outliers.join(";")
                    );
                }
                None => {
                    let _ = writeln!(s, "{method},{freq:?},{j},0,{failed},,,,,,,,");
                }
            }
        }
        s
    }

    /// Spectrum rows for one `(method, frequency)`: matched pairs first,
    /// then unmatched estimates with empty reference columns.
    pub fn spectrum_csv(&self, method: &str, frequency: f64, params: &str) -> String {
        let mut s = String::from(
            "method,params,frequency,paths_per_state,trial,pair,ref_re,ref_im,est_re,est_im,abs_err,mae\n",
        );
        for r in self
            .records
            .iter()
            .filter(|r| r.method == method && r.frequency == frequency)
        {
            if let TrialOutcome::Scored {
                mae,
                pairs,
                unmatched,
            } = &r.outcome
            {
                for (p, (a, b)) in pairs.iter().enumerate() {
                    let _ = writeln!(
                        s,
                        "{method},{params},{frequency:?},{},{},{p},{:?},{:?},{:?},{:?},{:?},{mae:?}",
                        r.paths_per_state,
                        r.trial,
                        a.re,
                        a.im,
                        b.re,
                        b.im,
                        (a - b).norm()
                    );
                }
                for b in unmatched {
                    let _ = writeln!(
                        s,
                        "{method},{params},{frequency:?},{},{},,,,{:?},{:?},,{mae:?}",
                        r.paths_per_state, r.trial, b.re, b.im
                    );
                }
            }
        }
        s
    }
}

fn csv_text(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

pub(crate) fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))
}
