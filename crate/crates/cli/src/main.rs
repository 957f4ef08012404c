//! Command-line front end: simulate data, fit the factor model, estimate
//! effects, run diagnostics and Monte Carlo experiments.
//!
//! Exit codes: 0 on success, 2 when the estimand is not identified from the
//! data, 1 for usage and every other error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use multicause::deconfounder::{self, AteOptions, DiagnoseOptions};
use multicause::harness::{self, parse_contrast, parse_value_contrast, ExperimentConfig, ReportFormat};
use multicause::iv::{self, CfBasis, CfOptions};
use multicause::parametric_id::{self, AdditiveOptions, BasisSpec};
use multicause::scenarios::{self, load_csv_as, Dataset, ScenarioSpec, TreatmentKind};
use multicause::stochastic_intervention::{self, SIConfig, WeightMode};
use multicause::{fit_em, Error, FitConfig, LatentClassModel, TreatmentDistribution, TreatmentModel};

#[derive(Parser)]
#[command(name = "multicause", version, about = "Multiple-treatment causal effect estimation")]
struct Cli {
    /// Seed for simulation, EM restarts and bootstrap resampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML configuration (a scenario for `simulate`, an experiment for `mc`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Fig1,
    Fig2a,
    Fig2b,
    Fig3,
    Iv,
    Cf,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum Method {
    Deconfounder,
    Parametric,
    Naive,
    Iv,
    Cf,
    Si,
}

#[derive(Clone, Copy, ValueEnum)]
enum Weights {
    Oracle,
    Posterior,
}

#[derive(Clone, Copy, ValueEnum)]
enum Basis {
    NormalScore,
    Raw,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and write it as CSV.
    Simulate {
        /// Built-in scenario, ignored when --config is given.
        #[arg(long, value_enum, default_value_t = Scenario::Fig1)]
        scenario: Scenario,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit the latent-class factor model and write it as JSON.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
    },
    /// Estimate a causal contrast.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// Treatment contrast `a:a'`, e.g. `111:000` (or `1:0` for `cf`).
        #[arg(long)]
        contrast: Option<String>,
        /// Fitted model JSON; the model is fitted when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        k: usize,
        /// Fix the confounding coefficient in the parametric model.
        #[arg(long)]
        sigma_known: Option<f64>,
        /// Intervention distribution literal: `prod:<p1,..,pm>` or `table:<file.csv>`.
        #[arg(long)]
        p1: Option<String>,
        #[arg(long)]
        p0: Option<String>,
        #[arg(long, value_enum, default_value_t = Weights::Posterior)]
        weights: Weights,
        /// Use the factorized treatment model for `si` (four treatments).
        #[arg(long)]
        factorized: bool,
        /// Divide each arm by n instead of self-normalizing.
        #[arg(long)]
        unnormalized: bool,
        #[arg(long)]
        truncation: Option<f64>,
        #[arg(long, value_enum, default_value_t = Basis::NormalScore)]
        basis: Basis,
        #[arg(long, default_value_t = 200)]
        bootstrap: usize,
    },
    /// Check the factor model against the observed treatments.
    Diagnose {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 199)]
        gof_replicates: usize,
    },
    /// Run a Monte Carlo experiment described by --config.
    Mc {
        /// Override the configured worker thread count.
        #[arg(long)]
        parallelism: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let identification = e
                .downcast_ref::<Error>()
                .is_some_and(Error::is_identification);
            ExitCode::from(if identification { 2 } else { 1 })
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_model(path: Option<&Path>, data: &Dataset, k: usize, seed: u64) -> anyhow::Result<LatentClassModel> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(LatentClassModel::from_json(&text)?)
        }
        None => Ok(fit_em(data, k, &FitConfig { seed, ..FitConfig::default() })?),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let out = cli.out.as_deref();
    match cli.command {
        Command::Simulate { scenario, n } => {
            let mut spec = match &cli.config {
                Some(path) => ScenarioSpec::from_toml_str(&fs::read_to_string(path)?)?,
                None => match scenario {
                    Scenario::Fig1 => ScenarioSpec::fig1_default(),
                    Scenario::Fig2a => ScenarioSpec::fig2a_default(),
                    Scenario::Fig2b => ScenarioSpec::fig2b_default(),
                    Scenario::Fig3 => ScenarioSpec::fig3_default(),
                    Scenario::Iv => ScenarioSpec::iv_default(),
                    Scenario::Cf => ScenarioSpec::cf_default(),
                },
            };
            if let Some(n) = n {
                spec.n = n;
            }
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            emit(out, &scenarios::generate(&spec)?.to_csv_string())
        }
        Command::Fit { data, k, restarts } => {
            let ds = load_csv_as(&data, TreatmentKind::Binary)?;
            let cfg = FitConfig {
                restarts,
                seed,
                ..FitConfig::default()
            };
            emit(out, &(fit_em(&ds, k, &cfg)?.to_json()? + "\n"))
        }
        Command::Estimate {
            data,
            method,
            contrast,
            model,
            k,
            sigma_known,
            p1,
            p0,
            weights,
            factorized,
            unnormalized,
            truncation,
            basis,
            bootstrap,
        } => {
            let kind = if method == Method::Cf {
                TreatmentKind::Continuous
            } else {
                TreatmentKind::Binary
            };
            let ds = load_csv_as(&data, kind)?;
            let boot = multicause::bootstrap::BootstrapConfig {
                replicates: bootstrap,
                seed,
            };
            let patterns = || -> anyhow::Result<(Vec<u8>, Vec<u8>)> {
                match &contrast {
                    Some(c) => Ok(parse_contrast(c)?),
                    None => bail!("--contrast is required for this method"),
                }
            };
            let report = match method {
                Method::Deconfounder => {
                    let (a, ap) = patterns()?;
                    let m = load_model(model.as_deref(), &ds, k, seed)?;
                    deconfounder::estimate_ate(&ds, &m, &a, &ap, &AteOptions { bootstrap: boot })?
                }
                Method::Parametric => {
                    let (a, ap) = patterns()?;
                    let m = load_model(model.as_deref(), &ds, k, seed)?;
                    let spec = BasisSpec {
                        sigma_known,
                        ..BasisSpec::identity()
                    };
                    parametric_id::estimate_additive(&ds, &m, &spec, &a, &ap, &AdditiveOptions { bootstrap: boot })?
                }
                Method::Naive => {
                    let (a, ap) = patterns()?;
                    parametric_id::naive_regression(&ds, &BasisSpec::identity(), &AdditiveOptions { bootstrap: boot })?
                        .report(&a, &ap)?
                }
                Method::Iv => {
                    let (a, ap) = patterns()?;
                    iv::estimate_q(&ds, &boot)?.report(&a, Some(&ap))?
                }
                Method::Cf => {
                    let (a, ap) = parse_value_contrast(contrast.as_deref().unwrap_or("1:0"))?;
                    let opts = CfOptions {
                        basis: match basis {
                            Basis::NormalScore => CfBasis::NormalScore,
                            Basis::Raw => CfBasis::Raw,
                        },
                        bootstrap: boot,
                    };
                    iv::cf_ate(&ds, a, ap, &opts)?
                }
                Method::Si => {
                    let (Some(p1), Some(p0)) = (p1, p0) else {
                        bail!("--p1 and --p0 are required for --method si");
                    };
                    let mut cfg = SIConfig::new(
                        TreatmentDistribution::parse_literal(&p1)?,
                        TreatmentDistribution::parse_literal(&p0)?,
                    );
                    cfg.weights = match weights {
                        Weights::Oracle => WeightMode::Oracle,
                        Weights::Posterior => WeightMode::PosteriorMixture,
                    };
                    cfg.normalize = !unnormalized;
                    cfg.truncation = truncation;
                    cfg.bootstrap = boot;
                    if factorized {
                        let fit = FitConfig { seed, ..FitConfig::default() };
                        let fm = parametric_id::fit_factorized_model(&ds, k, &fit)?;
                        stochastic_intervention::delta_from_factorized(&ds, &fm, &cfg)?
                    } else {
                        let m = load_model(model.as_deref(), &ds, k, seed)?;
                        stochastic_intervention::estimate_delta(&ds, &m, &cfg)?
                    }
                }
            };
            match cli.format {
                Format::Json => emit(out, &(report.to_json()? + "\n")),
                Format::Csv => {
                    let mut text = String::from("term,estimate,se\n");
                    text += &format!("{},{},{}\n", report.estimand, report.estimate, report.se);
                    for c in &report.coefficients {
                        text += &format!("{},{},{}\n", c.name, c.estimate, c.se);
                    }
                    emit(out, &text)
                }
            }
        }
        Command::Diagnose {
            data,
            model,
            k,
            alpha,
            gof_replicates,
        } => {
            let ds = load_csv_as(&data, TreatmentKind::Binary)?;
            let m = load_model(model.as_deref(), &ds, k, seed)?;
            let opts = DiagnoseOptions {
                alpha,
                gof_replicates,
                seed,
                ..DiagnoseOptions::default()
            };
            let diagnostic = deconfounder::diagnose_conditional_independence(&ds, &m, &opts)?;
            let degeneracy = deconfounder::check_overlap_degeneracy(&ds, &m)?;
            let identifiability = multicause::factor_model::identifiability_precheck(
                m.k(),
                ds.m(),
                Some(&m),
                multicause::factor_model::INFORMATIVE_THRESHOLD,
            );
            let value = serde_json::json!({
                "goodness_of_fit": diagnostic,
                "degeneracy": degeneracy,
                "identifiability": identifiability,
            });
            emit(out, &(serde_json::to_string_pretty(&value)? + "\n"))
        }
        Command::Mc { parallelism } => {
            let Some(path) = &cli.config else {
                bail!("mc requires --config <experiment.toml>");
            };
            let mut cfg = ExperimentConfig::load(path)?;
            if let Some(s) = cli.seed {
                cfg.base_seed = s;
            }
            if let Some(p) = parallelism {
                cfg.parallelism = p;
            }
            let summary = harness::run_experiment(&cfg)?;
            let format = match cli.format {
                Format::Json => ReportFormat::Json,
                Format::Csv => ReportFormat::Csv,
            };
            match out.map(Path::to_path_buf).or(cfg.output.clone()) {
                Some(path) => {
                    harness::emit_report(&summary, format, &path)?;
                    Ok(())
                }
                None => match format {
                    ReportFormat::Json => emit(None, &(summary.to_json()? + "\n")),
                    ReportFormat::Csv => emit(None, &harness::rows_csv(&summary)),
                },
            }
        }
    }
}
