//! Estimate reports shared by every estimator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scenarios::TreatmentDistribution;

/// What the estimate contrasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Contrast {
    Patterns { a: String, a_prime: String },
    Distributions { p1: TreatmentDistribution, p0: TreatmentDistribution },
    Values { a: f64, a_prime: f64 },
    /// A level rather than a contrast, e.g. a mean potential outcome.
    Level { a: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// FNV-1a digest of the estimator settings.
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimand: String,
    pub method: String,
    pub contrast: Contrast,
    pub estimate: f64,
    /// Bootstrap standard error; 0 when no replicates were run.
    pub se: f64,
    pub replicates: usize,
    pub failed_replicates: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coefficients: Vec<Coefficient>,
    /// Numeric diagnostics; boolean flags are stored as 0/1.
    #[serde(default)]
    pub diagnostics: BTreeMap<String, f64>,
    #[serde(default)]
    pub notes: Vec<String>,
    pub provenance: Provenance,
}

impl EstimateReport {
    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

/// 64-bit FNV-1a, hex encoded.
pub fn digest(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

pub(crate) fn digest_of<T: Serialize>(value: &T) -> String {
    digest(&serde_json::to_string(value).unwrap_or_default())
}

/// `Σ_j coef_j (x_j − y_j)`, summed in treatment order so swapping the
/// arguments negates the result exactly.
pub(crate) fn linear_contrast(coef: &[f64], x: &[f64], y: &[f64]) -> f64 {
    coef.iter()
        .zip(x.iter().zip(y))
        .map(|(c, (a, b))| c * (a - b))
        .sum()
}
