//! Contrasts between treatment distributions by importance weighting.
//!
//! `δ(p1, p0) = E_{p1}[Y(A)] − E_{p0}[Y(A)]`, estimated from rows weighted
//! by `p_j(A_i) / d_i` where `d_i` is the treatment model's probability of
//! the observed pattern.

use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_draws, BootstrapConfig};
use crate::error::{Error, Result};
use crate::factor_model::TreatmentModel;
use crate::parametric_id::FactorizedTreatmentModel;
use crate::pattern;
use crate::report::{digest_of, Contrast, EstimateReport, Provenance};
use crate::scenarios::{Dataset, TreatmentDistribution};

/// Denominators below this raise [`Error::WeightExplosion`].
pub const MIN_DENOMINATOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `d_i = p(A_i | Z_i)` at the recorded latent; for validation on
    /// simulated data.
    #[default]
    Oracle,
    /// `d_i = Σ_z p̂(A_i | z) p̂(z | A_i)`.
    PosteriorMixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SIConfig {
    pub p1: TreatmentDistribution,
    pub p0: TreatmentDistribution,
    #[serde(default)]
    pub weights: WeightMode,
    /// Self-normalize each arm by its weight mass; otherwise divide by `n`.
    #[serde(default = "default_normalize")]
    pub normalize: bool,
    /// Cap on each arm's weight `p_j(A_i) / d_i`.
    #[serde(default)]
    pub truncation: Option<f64>,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default = "default_support_threshold")]
    pub support_threshold: f64,
}

fn default_normalize() -> bool {
    true
}

fn default_support_threshold() -> f64 {
    1e-10
}

impl SIConfig {
    pub fn new(p1: TreatmentDistribution, p0: TreatmentDistribution) -> Self {
        SIConfig {
            p1,
            p0,
            weights: WeightMode::default(),
            normalize: true,
            truncation: None,
            bootstrap: BootstrapConfig::default(),
            support_threshold: default_support_threshold(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.p1.validate()?;
        self.p0.validate()?;
        if self.p1.m() != self.p0.m() {
            return Err(Error::config("p0", "p1 and p0 differ in dimension"));
        }
        if let Some(t) = self.truncation {
            if !(t > 0.0) {
                return Err(Error::config("truncation", "must be positive"));
            }
        }
        if !(self.support_threshold >= 0.0) {
            return Err(Error::config("support_threshold", "must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportViolation {
    pub arm: String,
    pub pattern: String,
    /// Smallest `p̂(a | z)` over classes with positive prior.
    pub min_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportReport {
    pub threshold: f64,
    pub passed: bool,
    pub violations: Vec<SupportViolation>,
    pub notes: Vec<String>,
}

/// Check that every pattern given positive probability by `p1` or `p0` has
/// probability above the threshold under every reachable latent class.
pub fn support_check<M: TreatmentModel + ?Sized>(config: &SIConfig, model: &M) -> Result<SupportReport> {
    config.validate()?;
    let m = model.m();
    if config.p1.m() != m {
        return Err(Error::config("p1", format!("dimension {} differs from m = {m}", config.p1.m())));
    }
    let classes: Vec<usize> = (0..model.k()).filter(|&z| model.prior()[z] > 0.0).collect();
    let mut violations = Vec::new();
    let mut notes = Vec::new();
    for (arm, dist) in [("p1", &config.p1), ("p0", &config.p0)] {
        for a in pattern::enumerate(m)? {
            if dist.prob(&a) <= 0.0 {
                continue;
            }
            let min = classes
                .iter()
                .map(|&z| model.conditional(&a, z))
                .fold(f64::INFINITY, f64::min);
            if !(min > config.support_threshold) {
                violations.push(SupportViolation {
                    arm: arm.into(),
                    pattern: pattern::format(&a),
                    min_probability: min,
                });
            }
        }
        if let Some(at) = dist.point_mass_at() {
            notes.push(format!(
                "{arm} is a point mass at {}; its arm is a reweighted mean over rows with that pattern",
                pattern::format(&at)
            ));
        }
    }
    Ok(SupportReport {
        threshold: config.support_threshold,
        passed: violations.is_empty(),
        violations,
        notes,
    })
}

/// Per-row arm weights `(u1, u0)` and the number of capped weights.
fn row_weights<M: TreatmentModel + ?Sized>(
    dataset: &Dataset,
    model: &M,
    config: &SIConfig,
) -> Result<(Vec<[f64; 2]>, usize)> {
    let latent = match config.weights {
        WeightMode::Oracle => Some(dataset.latent().ok_or_else(|| {
            Error::config("weights", "oracle weights need the latent column Z in the dataset")
        })?),
        WeightMode::PosteriorMixture => None,
    };
    let mut truncated = 0;
    let mut out = Vec::with_capacity(dataset.n());
    for i in 0..dataset.n() {
        let a = dataset.pattern(i);
        let d = match latent {
            Some(z) => {
                let zi = z[i];
                if zi < 0.0 || zi.fract() != 0.0 || zi as usize >= model.k() {
                    return Err(Error::InvalidData(format!("row {i}: latent {zi} is not a class index")));
                }
                model.conditional(&a, zi as usize)
            }
            None => {
                let post = model.posterior(&a);
                (0..model.k()).map(|z| model.conditional(&a, z) * post[z]).sum()
            }
        };
        if !(d >= MIN_DENOMINATOR) {
            return Err(Error::WeightExplosion { row: i, denominator: d });
        }
        let mut u = [config.p1.prob(&a) / d, config.p0.prob(&a) / d];
        if let Some(cap) = config.truncation {
            for v in u.iter_mut() {
                if *v > cap {
                    *v = cap;
                    truncated += 1;
                }
            }
        }
        out.push(u);
    }
    Ok((out, truncated))
}

/// `δ̂` over the given rows: each arm is `Σ Y u / Σ u` when normalizing and
/// `Σ Y u / n` otherwise.
fn delta_on(rows: &[usize], y: &[f64], u: &[[f64; 2]], normalize: bool) -> Result<f64> {
    let mut arms = [0.0; 2];
    for (j, arm) in arms.iter_mut().enumerate() {
        let (mut num, mut mass) = (0.0, 0.0);
        for &i in rows {
            num += y[i] * u[i][j];
            mass += u[i][j];
        }
        *arm = if normalize {
            if mass <= 0.0 {
                return Err(Error::identification(
                    format!("arm p{} has no weight on the observed patterns", 1 - j),
                    vec![format!("p{}", 1 - j)],
                ));
            }
            num / mass
        } else {
            num / rows.len() as f64
        };
    }
    Ok(arms[0] - arms[1])
}

/// Importance-weighted estimate of `δ(p1, p0)`.
pub fn estimate_delta<M: TreatmentModel + ?Sized>(
    dataset: &Dataset,
    model: &M,
    config: &SIConfig,
) -> Result<EstimateReport> {
    estimate_with(dataset, model, config, "si")
}

/// [`estimate_delta`] with denominators from the factorized model in which
/// `A_1` causes `A_2` and `A_3`.
pub fn delta_from_factorized(
    dataset: &Dataset,
    model: &FactorizedTreatmentModel,
    config: &SIConfig,
) -> Result<EstimateReport> {
    estimate_with(dataset, model, config, "si_factorized")
}

fn estimate_with<M: TreatmentModel + ?Sized>(
    dataset: &Dataset,
    model: &M,
    config: &SIConfig,
    method: &str,
) -> Result<EstimateReport> {
    dataset.require_binary()?;
    if model.m() != dataset.m() {
        return Err(Error::InvalidData(format!(
            "model has {} treatments, dataset has {}",
            model.m(),
            dataset.m()
        )));
    }
    let support = support_check(config, model)?;
    if !support.passed {
        return Err(Error::identification(
            "intervention distributions reach patterns outside the treatment model's support",
            support.violations.iter().map(|v| format!("{}:{}", v.arm, v.pattern)).collect(),
        ));
    }
    let (u, truncated) = row_weights(dataset, model, config)?;
    let y = dataset.outcome();
    let all: Vec<usize> = (0..dataset.n()).collect();
    let estimate = delta_on(&all, y, &u, config.normalize)?;
    let draws = bootstrap_draws(dataset.n(), 1, &config.bootstrap, |rows| {
        Ok(vec![delta_on(rows, y, &u, config.normalize)?])
    });

    let mut notes = support.notes;
    notes.push(if config.normalize {
        "each arm is self-normalized by its weight mass".into()
    } else {
        "each arm is divided by n".into()
    });
    notes.push(match config.weights {
        WeightMode::Oracle => "denominators use the recorded latent class".into(),
        WeightMode::PosteriorMixture => "denominators mix p(A | z) over the posterior p(z | A)".into(),
    });
    if truncated > 0 {
        notes.push(format!("{truncated} weights truncated at {}", config.truncation.unwrap_or_default()));
    }
    let max_weight = u.iter().flatten().copied().fold(0.0, f64::max);
    Ok(EstimateReport {
        estimand: "delta".into(),
        method: method.into(),
        contrast: Contrast::Distributions {
            p1: config.p1.clone(),
            p0: config.p0.clone(),
        },
        estimate,
        se: draws.se_of(|d| d[0]),
        replicates: draws.replicates_used(),
        failed_replicates: draws.failures,
        coefficients: Vec::new(),
        diagnostics: [
            ("max_weight".to_string(), max_weight),
            ("truncated_weights".to_string(), truncated as f64),
            ("normalized".to_string(), config.normalize as u8 as f64),
        ]
        .into_iter()
        .collect(),
        notes,
        provenance: Provenance {
            seed: config.bootstrap.seed,
            config_digest: digest_of(config),
        },
    })
}
