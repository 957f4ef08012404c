//! Configuration-driven Monte Carlo experiments.
//!
//! Replicate `r` simulates its dataset with seed
//! `stream_seed(base_seed, Replicates, r)` (see [`crate::rng`]) and runs
//! every configured estimator on it. Replicates are independent units of
//! work, so the results do not depend on the number of worker threads.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::BootstrapConfig;
use crate::deconfounder::{self, AteOptions, DiagnoseOptions};
use crate::error::{Error, Result};
use crate::factor_model::{fit_em, FitConfig, LatentClassModel};
use crate::iv::{self, CfBasis, CfOptions};
use crate::parametric_id::{self, AdditiveOptions, BasisSpec};
use crate::pattern;
use crate::report::{digest_of, EstimateReport};
use crate::rng::{derive_seed, stream_seed, Stream};
use crate::scenarios::{self, Dataset, ScenarioSpec, TreatmentDistribution};
use crate::stochastic_intervention::{self, SIConfig, WeightMode};

/// Which treatment model supplies stochastic-intervention weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SiModel {
    #[default]
    LatentClass,
    Factorized,
}

fn default_contrast() -> String {
    "1:0".into()
}

fn default_alpha() -> f64 {
    0.05
}

fn default_gof_replicates() -> usize {
    199
}

fn default_refit_restarts() -> usize {
    2
}

fn default_true() -> bool {
    true
}

/// One estimator to run on every replicate. `bootstrap` is the number of
/// bootstrap replicates for the standard error (0 skips it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum EstimatorConfig {
    Deconfounder {
        /// `a:a′`, e.g. `111:000`.
        contrast: String,
        #[serde(default)]
        bootstrap: usize,
    },
    Parametric {
        contrast: String,
        #[serde(default)]
        sigma_known: Option<f64>,
        #[serde(default)]
        bootstrap: usize,
    },
    Naive {
        contrast: String,
        #[serde(default)]
        bootstrap: usize,
    },
    Iv {
        contrast: String,
        #[serde(default)]
        bootstrap: usize,
    },
    Cf {
        #[serde(default = "default_contrast")]
        contrast: String,
        #[serde(default)]
        basis: CfBasis,
        #[serde(default)]
        bootstrap: usize,
    },
    Si {
        /// Distribution literals, `prod:<p1,..,pm>` or `table:<file>`.
        p1: String,
        p0: String,
        #[serde(default)]
        weights: WeightMode,
        #[serde(default)]
        model: SiModel,
        #[serde(default = "default_true")]
        normalize: bool,
        #[serde(default)]
        truncation: Option<f64>,
        #[serde(default)]
        bootstrap: usize,
    },
    Diagnose {
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_gof_replicates")]
        gof_replicates: usize,
        #[serde(default = "default_refit_restarts")]
        refit_restarts: usize,
    },
}

impl EstimatorConfig {
    pub fn method(&self) -> &'static str {
        match self {
            EstimatorConfig::Deconfounder { .. } => "deconfounder",
            EstimatorConfig::Parametric { .. } => "parametric",
            EstimatorConfig::Naive { .. } => "naive",
            EstimatorConfig::Iv { .. } => "iv",
            EstimatorConfig::Cf { .. } => "cf",
            EstimatorConfig::Si { .. } => "si",
            EstimatorConfig::Diagnose { .. } => "diagnose",
        }
    }

    fn needs_latent_class_fit(&self) -> bool {
        match self {
            EstimatorConfig::Deconfounder { .. }
            | EstimatorConfig::Parametric { .. }
            | EstimatorConfig::Diagnose { .. } => true,
            EstimatorConfig::Si { weights, model, .. } => {
                *weights == WeightMode::PosteriorMixture && *model == SiModel::LatentClass
            }
            _ => false,
        }
    }
}

/// Split `a:a′` into two binary patterns.
pub fn parse_contrast(text: &str) -> Result<(Vec<u8>, Vec<u8>)> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| Error::config("contrast", format!("expected `a:a'`, got `{text}`")))?;
    Ok((pattern::parse(a)?, pattern::parse(b)?))
}

/// Split `x:x′` into two real treatment values.
pub fn parse_value_contrast(text: &str) -> Result<(f64, f64)> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| Error::config("contrast", format!("expected `a:a'`, got `{text}`")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::config("contrast", format!("`{s}` is not a number")))
    };
    Ok((parse(a)?, parse(b)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSpec,
    pub estimators: Vec<EstimatorConfig>,
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Worker threads; 0 uses the rayon default.
    #[serde(default)]
    pub parallelism: usize,
    /// Latent classes for the factor model.
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default)]
    pub fit: FitConfig,
}

fn default_classes() -> usize {
    2
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Toml(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ExperimentConfig::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::config("replicates", "must be at least 1"));
        }
        if self.estimators.is_empty() {
            return Err(Error::config("estimators", "at least one estimator required"));
        }
        if self.classes == 0 {
            return Err(Error::config("classes", "must be at least 1"));
        }
        self.fit.validate()?;
        self.scenario.validate()
    }
}

/// One estimator's result on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub seed: u64,
    pub estimator: String,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub oracle: Option<f64>,
    pub p_value: Option<f64>,
    pub rejected: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub successes: usize,
    pub failures: usize,
    pub mean: Option<f64>,
    /// Mean of `estimate − oracle`.
    pub bias: Option<f64>,
    /// Population standard deviation of the estimates.
    pub sd: Option<f64>,
    pub rmse: Option<f64>,
    pub mean_se: Option<f64>,
    pub rejection_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCSummary {
    pub replicates: usize,
    pub base_seed: u64,
    pub config_digest: String,
    pub estimators: Vec<EstimatorSummary>,
    pub rows: Vec<ReplicateRow>,
}

impl MCSummary {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn estimator(&self, name: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.estimator == name)
    }
}

/// Seed of replicate `r`.
pub fn replicate_seed(base_seed: u64, r: usize) -> u64 {
    stream_seed(base_seed, Stream::Replicates, r as u64)
}

fn label(index: usize, est: &EstimatorConfig, all: &[EstimatorConfig]) -> String {
    let same = all.iter().filter(|e| e.method() == est.method()).count();
    if same == 1 {
        est.method().to_string()
    } else {
        format!("{}_{index}", est.method())
    }
}

struct Outcome {
    estimate: f64,
    se: Option<f64>,
    oracle: Option<f64>,
    p_value: Option<f64>,
    rejected: Option<bool>,
}

impl Outcome {
    fn from_report(report: EstimateReport, oracle: Option<f64>, bootstrap: usize) -> Self {
        Outcome {
            estimate: report.estimate,
            se: (bootstrap > 0).then_some(report.se),
            oracle,
            p_value: None,
            rejected: None,
        }
    }
}

fn bootstrap(replicates: usize, seed: u64) -> BootstrapConfig {
    BootstrapConfig { replicates, seed }
}

struct Replicate<'a> {
    spec: ScenarioSpec,
    data: Dataset,
    seed: u64,
    config: &'a ExperimentConfig,
    model: Option<std::result::Result<LatentClassModel, String>>,
}

impl Replicate<'_> {
    fn model(&self) -> Result<&LatentClassModel> {
        match &self.model {
            Some(Ok(m)) => Ok(m),
            Some(Err(e)) => Err(Error::InvalidData(format!("factor model fit failed: {e}"))),
            None => Err(Error::InvalidData("no factor model was fitted".into())),
        }
    }

    fn run(&self, index: usize, est: &EstimatorConfig) -> Result<Outcome> {
        let seed = derive_seed(self.seed, 1000 + index as u64);
        let spec = &self.spec;
        match est {
            EstimatorConfig::Deconfounder { contrast, bootstrap: b } => {
                let (a, ap) = parse_contrast(contrast)?;
                let opts = AteOptions {
                    bootstrap: bootstrap(*b, seed),
                };
                let r = deconfounder::estimate_ate(&self.data, self.model()?, &a, &ap, &opts)?;
                Ok(Outcome::from_report(r, scenarios::true_ate(spec, &a, &ap).ok(), *b))
            }
            EstimatorConfig::Parametric {
                contrast,
                sigma_known,
                bootstrap: b,
            } => {
                let (a, ap) = parse_contrast(contrast)?;
                let basis = BasisSpec {
                    sigma_known: *sigma_known,
                    ..BasisSpec::identity()
                };
                let opts = AdditiveOptions {
                    bootstrap: bootstrap(*b, seed),
                };
                let r = parametric_id::estimate_additive(&self.data, self.model()?, &basis, &a, &ap, &opts)?;
                Ok(Outcome::from_report(r, scenarios::true_ate(spec, &a, &ap).ok(), *b))
            }
            EstimatorConfig::Naive { contrast, bootstrap: b } => {
                let (a, ap) = parse_contrast(contrast)?;
                let opts = AdditiveOptions {
                    bootstrap: bootstrap(*b, seed),
                };
                let fit = parametric_id::naive_regression(&self.data, &BasisSpec::identity(), &opts)?;
                let r = fit.report(&a, &ap)?;
                Ok(Outcome::from_report(r, scenarios::true_ate(spec, &a, &ap).ok(), *b))
            }
            EstimatorConfig::Iv { contrast, bootstrap: b } => {
                let (a, ap) = parse_contrast(contrast)?;
                let fit = iv::estimate_q(&self.data, &bootstrap(*b, seed))?;
                let r = fit.report(&a, Some(&ap))?;
                Ok(Outcome::from_report(r, scenarios::true_ate(spec, &a, &ap).ok(), *b))
            }
            EstimatorConfig::Cf {
                contrast,
                basis,
                bootstrap: b,
            } => {
                let (a, ap) = parse_value_contrast(contrast)?;
                let opts = CfOptions {
                    basis: *basis,
                    bootstrap: bootstrap(*b, seed),
                };
                let r = iv::cf_ate(&self.data, a, ap, &opts)?;
                let oracle = spec.beta.first().map(|beta| beta * (a - ap));
                Ok(Outcome::from_report(r, oracle, *b))
            }
            EstimatorConfig::Si {
                p1,
                p0,
                weights,
                model,
                normalize,
                truncation,
                bootstrap: b,
            } => {
                let mut cfg = SIConfig::new(
                    TreatmentDistribution::parse_literal(p1)?,
                    TreatmentDistribution::parse_literal(p0)?,
                );
                cfg.weights = *weights;
                cfg.normalize = *normalize;
                cfg.truncation = *truncation;
                cfg.bootstrap = bootstrap(*b, seed);
                let oracle = scenarios::true_delta(spec, &cfg.p1, &cfg.p0).ok();
                let r = match (weights, model) {
                    (WeightMode::Oracle, _) => {
                        let truth = spec.true_treatment_model()?;
                        stochastic_intervention::estimate_delta(&self.data, truth.as_ref(), &cfg)?
                    }
                    (WeightMode::PosteriorMixture, SiModel::LatentClass) => {
                        stochastic_intervention::estimate_delta(&self.data, self.model()?, &cfg)?
                    }
                    (WeightMode::PosteriorMixture, SiModel::Factorized) => {
                        let fit = FitConfig {
                            seed: derive_seed(seed, 1),
                            ..self.config.fit
                        };
                        let fm = parametric_id::fit_factorized_model(&self.data, self.config.classes, &fit)?;
                        stochastic_intervention::delta_from_factorized(&self.data, &fm, &cfg)?
                    }
                };
                Ok(Outcome::from_report(r, oracle, *b))
            }
            EstimatorConfig::Diagnose {
                alpha,
                gof_replicates,
                refit_restarts,
            } => {
                let opts = DiagnoseOptions {
                    alpha: *alpha,
                    gof_replicates: *gof_replicates,
                    seed,
                    refit: FitConfig {
                        restarts: *refit_restarts,
                        seed,
                        ..self.config.fit
                    },
                };
                let d = deconfounder::diagnose_conditional_independence(&self.data, self.model()?, &opts)?;
                let p = d.goodness_of_fit.p_value;
                Ok(Outcome {
                    estimate: d.goodness_of_fit.g2,
                    se: None,
                    oracle: None,
                    p_value: Some(p),
                    rejected: Some(p < *alpha),
                })
            }
        }
    }
}

fn run_replicate(config: &ExperimentConfig, r: usize, labels: &[String]) -> Vec<ReplicateRow> {
    let seed = replicate_seed(config.base_seed, r);
    let failed = |e: String| -> Vec<ReplicateRow> {
        labels
            .iter()
            .map(|l| ReplicateRow {
                replicate: r,
                seed,
                estimator: l.clone(),
                estimate: None,
                se: None,
                oracle: None,
                p_value: None,
                rejected: None,
                error: Some(e.clone()),
            })
            .collect()
    };
    let spec = ScenarioSpec {
        seed,
        ..config.scenario.clone()
    };
    let data = match scenarios::generate(&spec) {
        Ok(d) => d,
        Err(e) => return failed(format!("simulation failed: {e}")),
    };
    let model = config.estimators.iter().any(|e| e.needs_latent_class_fit()).then(|| {
        let fit = FitConfig {
            seed: derive_seed(seed, 0),
            ..config.fit
        };
        fit_em(&data, config.classes, &fit).map_err(|e| e.to_string())
    });
    let rep = Replicate {
        spec,
        data,
        seed,
        config,
        model,
    };
    config
        .estimators
        .iter()
        .enumerate()
        .map(|(i, est)| {
            let mut row = ReplicateRow {
                replicate: r,
                seed,
                estimator: labels[i].clone(),
                estimate: None,
                se: None,
                oracle: None,
                p_value: None,
                rejected: None,
                error: None,
            };
            match rep.run(i, est) {
                Ok(o) if o.estimate.is_finite() => {
                    row.estimate = Some(o.estimate);
                    row.se = o.se.filter(|s| s.is_finite());
                    row.oracle = o.oracle;
                    row.p_value = o.p_value;
                    row.rejected = o.rejected;
                }
                Ok(_) => row.error = Some("non-finite estimate".into()),
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect()
}

fn summarize(label: &str, rows: &[&ReplicateRow]) -> EstimatorSummary {
    let ok: Vec<&&ReplicateRow> = rows.iter().filter(|r| r.estimate.is_some()).collect();
    let n = ok.len() as f64;
    let mean_of = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let est: Vec<f64> = ok.iter().filter_map(|r| r.estimate).collect();
    let mean = mean_of(&est);
    let sd = mean.map(|m| (est.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt());
    let with_oracle = !ok.is_empty() && ok.iter().all(|r| r.oracle.is_some());
    let errors: Vec<f64> = ok
        .iter()
        .filter_map(|r| Some(r.estimate? - r.oracle?))
        .collect();
    let bias = if with_oracle { mean_of(&errors) } else { None };
    let rmse = if with_oracle {
        Some((errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt())
    } else {
        None
    };
    let ses: Vec<f64> = ok.iter().filter_map(|r| r.se).collect();
    let decisions: Vec<f64> = ok
        .iter()
        .filter_map(|r| r.rejected.map(|b| b as u8 as f64))
        .collect();
    EstimatorSummary {
        estimator: label.to_string(),
        successes: ok.len(),
        failures: rows.len() - ok.len(),
        mean,
        bias,
        sd,
        rmse,
        mean_se: if ses.len() == ok.len() { mean_of(&ses) } else { None },
        rejection_rate: mean_of(&decisions),
    }
}

/// Run every replicate and aggregate per estimator. Replicate failures are
/// recorded in their rows and counted, never propagated.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MCSummary> {
    config.validate()?;
    let labels: Vec<String> = config
        .estimators
        .iter()
        .enumerate()
        .map(|(i, e)| label(i, e, &config.estimators))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| Error::config("parallelism", e.to_string()))?;
    let per_rep: Vec<Vec<ReplicateRow>> = pool.install(|| {
        (0..config.replicates)
            .into_par_iter()
            .map(|r| run_replicate(config, r, &labels))
            .collect()
    });
    let rows: Vec<ReplicateRow> = per_rep.into_iter().flatten().collect();
    let estimators = labels
        .iter()
        .map(|l| summarize(l, &rows.iter().filter(|r| &r.estimator == l).collect::<Vec<_>>()))
        .collect();
    let digest_input = ExperimentConfig {
        output: None,
        parallelism: 0,
        ..config.clone()
    };
    Ok(MCSummary {
        replicates: config.replicates,
        base_seed: config.base_seed,
        config_digest: digest_of(&digest_input),
        estimators,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Per-replicate table, one row per replicate and estimator.
pub fn rows_csv(summary: &MCSummary) -> String {
    let mut out = String::from("replicate,seed,estimator,estimate,se,oracle,p_value,rejected,error\n");
    for r in &summary.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.replicate,
            r.seed,
            csv_field(&r.estimator),
            opt(&r.estimate),
            opt(&r.se),
            opt(&r.oracle),
            opt(&r.p_value),
            opt(&r.rejected),
            csv_field(&opt(&r.error))
        );
    }
    out
}

/// Long format: `replicate,estimator,metric,value` with missing values omitted.
pub fn long_csv(summary: &MCSummary) -> String {
    let mut out = String::from("replicate,estimator,metric,value\n");
    for r in &summary.rows {
        let metrics = [
            ("estimate", r.estimate),
            ("se", r.se),
            ("oracle", r.oracle),
            ("p_value", r.p_value),
            ("rejected", r.rejected.map(|b| b as u8 as f64)),
        ];
        for (name, v) in metrics {
            if let Some(v) = v {
                let _ = writeln!(out, "{},{},{name},{v}", r.replicate, csv_field(&r.estimator));
            }
        }
    }
    out
}

/// Write the summary. JSON goes to `path`; CSV writes the per-replicate
/// table to `path` and the long-format table next to it with a `_long`
/// suffix. Returns the files written.
pub fn emit_report(summary: &MCSummary, format: ReportFormat, path: &Path) -> Result<Vec<PathBuf>> {
    match format {
        ReportFormat::Json => {
            fs::write(path, summary.to_json()? + "\n")?;
            Ok(vec![path.to_path_buf()])
        }
        ReportFormat::Csv => {
            fs::write(path, rows_csv(summary))?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
            let long = path.with_file_name(format!("{stem}_long.csv"));
            fs::write(&long, long_csv(summary))?;
            Ok(vec![path.to_path_buf(), long])
        }
    }
}
