//! Estimators for the joint causal effect of several treatments under an
//! unobserved multi-cause confounder.
//!
//! * [`factor_model`]: latent-class model of the treatments, fitted by EM.
//! * [`deconfounder`]: outcome regression adjusted by the substitute
//!   confounder, with model diagnostics and an overlap audit.
//! * [`parametric_id`]: additive outcome models identified by a linear
//!   independence condition, including causally related treatments.
//! * [`iv`]: instrumental-variable identification for discrete treatments
//!   and a control-function estimator for a continuous one.
//! * [`stochastic_intervention`]: contrasts between treatment distributions
//!   by importance weighting.
//! * [`scenarios`]: simulators with analytic oracles, and dataset I/O.
//! * [`harness`]: seeded Monte Carlo experiments driven by TOML configs.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod deconfounder;
pub mod error;
pub mod factor_model;
pub mod harness;
pub mod iv;
pub mod linalg;
pub mod parametric_id;
pub mod pattern;
pub mod report;
pub mod rng;
pub mod scenarios;
pub mod stochastic_intervention;

pub use error::{Error, Result};
pub use factor_model::{fit_em, FitConfig, LatentClassModel, TreatmentModel};
pub use report::EstimateReport;
pub use scenarios::{generate, Dataset, ScenarioSpec, TreatmentDistribution};
