//! Latent-class factor model for binary treatments.
//!
//! `p(a) = Σ_z π_z Π_j θ_zj^{a_j} (1 − θ_zj)^{1 − a_j}` with `k` classes,
//! fitted by EM on the `2^m` pattern counts (equivalent to row-level EM
//! and independent of `n` in cost).

use std::cmp::Ordering;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern;
use crate::rng::{stream_rng, Stream};
use crate::scenarios::Dataset;

/// Clamp for fitted Bernoulli parameters.
pub const PROB_EPS: f64 = 1e-6;

/// Minimal spread of a treatment's class probabilities for it to count as
/// carrying information about the latent class.
pub const INFORMATIVE_THRESHOLD: f64 = 0.01;

/// A model for `p(A | Z)` over binary patterns with a discrete latent `Z`.
pub trait TreatmentModel: Send + Sync {
    fn k(&self) -> usize;
    fn m(&self) -> usize;
    fn prior(&self) -> &[f64];

    /// `ln p(A = a | Z = z)`.
    fn log_conditional(&self, a: &[u8], z: usize) -> f64;

    fn conditional(&self, a: &[u8], z: usize) -> f64 {
        self.log_conditional(a, z).exp()
    }

    /// Per-class log joint `ln π_z + ln p(a | z)`.
    fn log_joint(&self, a: &[u8]) -> Vec<f64> {
        (0..self.k())
            .map(|z| self.prior()[z].ln() + self.log_conditional(a, z))
            .collect()
    }

    /// `ln p(a)`; exactly invariant to class relabelling.
    fn log_pattern_prob(&self, a: &[u8]) -> f64 {
        let lj = self.log_joint(a);
        let max = lj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return max;
        }
        let mut terms: Vec<f64> = lj.iter().map(|&l| (l - max).exp()).collect();
        terms.sort_by(f64::total_cmp);
        max + terms.iter().sum::<f64>().ln()
    }

    fn pattern_prob(&self, a: &[u8]) -> f64 {
        self.log_pattern_prob(a).exp()
    }

    /// `p(Z = · | A = a)`. Falls back to the prior for patterns that are
    /// impossible under every class.
    fn posterior(&self, a: &[u8]) -> Vec<f64> {
        let lj = self.log_joint(a);
        let max = lj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return self.prior().to_vec();
        }
        let w: Vec<f64> = lj.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter().map(|v| v / total).collect()
    }

    /// `E{g(Z) | A = a}` for per-class values `g`.
    fn posterior_mean(&self, a: &[u8], g: &[f64]) -> f64 {
        self.posterior(a).iter().zip(g).map(|(p, v)| p * v).sum()
    }

    /// `p(a)` for every pattern, indexed by code.
    fn pattern_probs(&self) -> Result<Vec<f64>> {
        Ok(pattern::enumerate(self.m())?
            .iter()
            .map(|a| self.pattern_prob(a))
            .collect())
    }

    /// Observed-data log-likelihood of pattern counts.
    fn loglik_counts(&self, counts: &[f64]) -> f64 {
        counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0.0)
            .map(|(code, &c)| c * self.log_pattern_prob(&pattern::decode(code, self.m())))
            .sum()
    }
}

/// Settings for EM fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Relative log-likelihood change below which EM stops.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iter: 500,
            tol: 1e-8,
            restarts: 10,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::config("max_iter", "must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("tol", "must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::config("restarts", "must be positive"));
        }
        Ok(())
    }
}

/// Fit metadata attached to an EM-estimated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub loglik: f64,
    pub iterations: usize,
    pub restarts: usize,
    /// Restart whose solution was kept.
    pub best_restart: usize,
    pub converged: bool,
    /// Log-likelihood after each E-step of the kept restart.
    pub trace: Vec<f64>,
    /// Number of parameters sitting on the clamp boundary.
    pub clamped: usize,
    /// Set when the fit collapsed: clamped parameters, an empty class, or
    /// too few informative treatments for the latent to be recovered.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentClassModel {
    prior: Vec<f64>,
    /// `cond[z][j] = P(A_j = 1 | Z = z)`.
    cond: Vec<Vec<f64>>,
    pub fit: Option<FitInfo>,
}

/// On-disk form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub k: usize,
    pub prior: Vec<f64>,
    pub cond: Vec<Vec<f64>>,
    pub loglik: Option<f64>,
    pub iters: Option<usize>,
}

impl LatentClassModel {
    /// A model from explicit tables. `cond` entries may sit anywhere in
    /// `[0, 1]`; only fitted models are clamped away from the boundary.
    pub fn new(prior: Vec<f64>, cond: Vec<Vec<f64>>) -> Result<Self> {
        if prior.is_empty() {
            return Err(Error::config("prior", "at least one class required"));
        }
        if prior.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::config("prior", "entries must be nonnegative"));
        }
        let total: f64 = prior.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config("prior", format!("sums to {total}, not 1")));
        }
        if cond.len() != prior.len() {
            return Err(Error::config("cond", "one row per class required"));
        }
        let m = cond[0].len();
        if m == 0 || cond.iter().any(|r| r.len() != m) {
            return Err(Error::config("cond", "rows must share a positive length"));
        }
        if cond.iter().flatten().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::config("cond", "probabilities must lie in [0, 1]"));
        }
        Ok(LatentClassModel {
            prior,
            cond,
            fit: None,
        })
    }

    pub fn cond(&self) -> &[Vec<f64>] {
        &self.cond
    }

    /// Relabel classes: new class `i` is old class `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> LatentClassModel {
        LatentClassModel {
            prior: perm.iter().map(|&z| self.prior[z]).collect(),
            cond: perm.iter().map(|&z| self.cond[z].clone()).collect(),
            fit: self.fit.clone(),
        }
    }

    /// Order classes by `cond[·][0]` ascending, then later columns, then the
    /// prior. Stable, so exact ties keep their order.
    pub fn canonicalize(&self) -> LatentClassModel {
        let mut order: Vec<usize> = (0..self.k()).collect();
        order.sort_by(|&x, &y| {
            self.cond[x]
                .iter()
                .zip(&self.cond[y])
                .map(|(a, b)| a.total_cmp(b))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or_else(|| self.prior[x].total_cmp(&self.prior[y]))
        });
        self.permuted(&order)
    }

    /// Number of treatments whose class probabilities spread by more than `threshold`.
    pub fn informative_treatments(&self, threshold: f64) -> Vec<usize> {
        (0..self.m())
            .filter(|&j| {
                let (lo, hi) = self.cond.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                    (lo.min(r[j]), hi.max(r[j]))
                });
                hi - lo > threshold
            })
            .collect()
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            k: self.k(),
            prior: self.prior.clone(),
            cond: self.cond.clone(),
            loglik: self.fit.as_ref().map(|f| f.loglik),
            iters: self.fit.as_ref().map(|f| f.iterations),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.k != file.prior.len() {
            return Err(Error::config("k", "k differs from prior length"));
        }
        let mut model = LatentClassModel::new(file.prior, file.cond)?;
        if let (Some(loglik), Some(iters)) = (file.loglik, file.iters) {
            model.fit = Some(FitInfo {
                loglik,
                iterations: iters,
                restarts: 0,
                best_restart: 0,
                converged: true,
                trace: vec![],
                clamped: 0,
                degenerate: false,
            });
        }
        Ok(model)
    }
}

impl TreatmentModel for LatentClassModel {
    fn k(&self) -> usize {
        self.prior.len()
    }

    fn m(&self) -> usize {
        self.cond[0].len()
    }

    fn prior(&self) -> &[f64] {
        &self.prior
    }

    fn log_conditional(&self, a: &[u8], z: usize) -> f64 {
        self.cond[z]
            .iter()
            .zip(a)
            .map(|(&p, &aj)| if aj == 1 { p.ln() } else { (1.0 - p).ln() })
            .sum()
    }
}

/// `p(Z | A = a)` under a latent-class model.
pub fn posterior(model: &LatentClassModel, a: &[u8]) -> Result<Vec<f64>> {
    pattern::check_len(a, model.m())?;
    Ok(model.posterior(a))
}

/// Per-row substitute confounder `E_M(Z | A_i)` in its full posterior form.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstituteConfounder {
    pub posteriors: Vec<Vec<f64>>,
}

impl SubstituteConfounder {
    /// `P(Z = 1 | A_i)` for two-class models, `E[Z | A_i]` (class index) otherwise.
    pub fn scalar(&self) -> Vec<f64> {
        self.posteriors
            .iter()
            .map(|p| p.iter().enumerate().map(|(z, q)| z as f64 * q).sum())
            .collect()
    }
}

/// Substitute confounder for every row. Each row is computed from its own
/// pattern, so equal patterns give bit-identical values.
pub fn substitute_confounder<M: TreatmentModel + ?Sized>(
    model: &M,
    dataset: &Dataset,
) -> Result<SubstituteConfounder> {
    dataset.require_binary()?;
    if dataset.m() != model.m() {
        return Err(Error::InvalidData(format!(
            "model has {} treatments, dataset has {}",
            model.m(),
            dataset.m()
        )));
    }
    let posteriors = (0..dataset.n())
        .into_par_iter()
        .map(|i| model.posterior(&dataset.pattern(i)))
        .collect();
    Ok(SubstituteConfounder { posteriors })
}

struct EmRun {
    prior: Vec<f64>,
    cond: Vec<Vec<f64>>,
    trace: Vec<f64>,
    converged: bool,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn em_run(
    cells: &[(Vec<u8>, f64)],
    mut prior: Vec<f64>,
    mut cond: Vec<Vec<f64>>,
    config: &FitConfig,
) -> EmRun {
    let k = prior.len();
    let m = cond[0].len();
    let total: f64 = cells.iter().map(|(_, c)| c).sum();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut lj = vec![0.0; k];
    for iter in 0..config.max_iter {
        let ln_prior: Vec<f64> = prior.iter().map(|p| p.ln()).collect();
        let ln_c: Vec<Vec<f64>> = cond.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect();
        let ln_1c: Vec<Vec<f64>> = cond
            .iter()
            .map(|r| r.iter().map(|p| (1.0 - p).ln()).collect())
            .collect();
        let mut weight = vec![0.0; k];
        let mut ones = vec![vec![0.0; m]; k];
        let mut ll = 0.0;
        for (a, count) in cells {
            for z in 0..k {
                let mut s = ln_prior[z];
                for j in 0..m {
                    s += if a[j] == 1 { ln_c[z][j] } else { ln_1c[z][j] };
                }
                lj[z] = s;
            }
            let max = lj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut norm = 0.0;
            for v in lj.iter_mut() {
                *v = (*v - max).exp();
                norm += *v;
            }
            ll += count * (max + norm.ln());
            for z in 0..k {
                let r = count * lj[z] / norm;
                weight[z] += r;
                for j in 0..m {
                    if a[j] == 1 {
                        ones[z][j] += r;
                    }
                }
            }
        }
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if (ll - prev).abs() <= config.tol * prev.abs() {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        if iter + 1 == config.max_iter {
            break;
        }
        for z in 0..k {
            prior[z] = weight[z] / total;
            if weight[z] > 0.0 {
                for j in 0..m {
                    cond[z][j] = clamp_prob(ones[z][j] / weight[z]);
                }
            }
        }
    }
    EmRun {
        prior,
        cond,
        trace,
        converged,
    }
}

fn random_start(k: usize, m: usize, seed: u64, restart: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut rng = stream_rng(seed, Stream::Restarts, restart as u64);
    let cond = (0..k)
        .map(|_| (0..m).map(|_| rng.random_range(0.05..0.95)).collect())
        .collect();
    let draws: Vec<f64> = (0..k).map(|_| Exp1.sample(&mut rng)).collect::<Vec<f64>>();
    let total: f64 = draws.iter().sum();
    let prior = draws.iter().map(|d| d / total).collect();
    (prior, cond)
}

/// Fit a `k`-class model by EM with restarts, keeping the highest
/// log-likelihood (ties go to the lowest restart index) and returning it
/// canonicalized.
pub fn fit_em(dataset: &Dataset, k: usize, config: &FitConfig) -> Result<LatentClassModel> {
    dataset.require_binary()?;
    if dataset.n() < k {
        return Err(Error::config("k", format!("k = {k} exceeds n = {}", dataset.n())));
    }
    let counts = dataset.pattern_counts()?;
    fit_em_counts(&counts, dataset.m(), k, config, None)
}

/// EM on pattern counts (indexed by code). `warm_start`, when given, is
/// used as restart 0 in place of a random start.
pub fn fit_em_counts(
    counts: &[f64],
    m: usize,
    k: usize,
    config: &FitConfig,
    warm_start: Option<&LatentClassModel>,
) -> Result<LatentClassModel> {
    config.validate()?;
    pattern::guard(m)?;
    if k == 0 {
        return Err(Error::config("k", "at least one class required"));
    }
    if m < usize::BITS as usize && k > (1usize << m) {
        return Err(Error::config(
            "k",
            format!("k = {k} exceeds the 2^{m} = {} possible patterns", 1usize << m),
        ));
    }
    if counts.len() != 1 << m {
        return Err(Error::InvalidData("pattern count vector has wrong length".into()));
    }
    let cells: Vec<(Vec<u8>, f64)> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0.0)
        .map(|(code, &c)| (pattern::decode(code, m), c))
        .collect();
    if cells.is_empty() {
        return Err(Error::InvalidData("no observations".into()));
    }
    if let Some(w) = warm_start {
        if w.k() != k || w.m() != m {
            return Err(Error::config("warm_start", "shape differs from the requested fit"));
        }
    }

    let runs: Vec<EmRun> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let (prior, cond) = match (r, warm_start) {
                (0, Some(w)) => (
                    w.prior.clone(),
                    w.cond.iter().map(|row| row.iter().map(|&p| clamp_prob(p)).collect()).collect(),
                ),
                _ => random_start(k, m, config.seed, r),
            };
            em_run(&cells, prior, cond, config)
        })
        .collect();

    let mut best = 0;
    for (r, run) in runs.iter().enumerate() {
        if run.trace.last() > runs[best].trace.last() {
            best = r;
        }
    }
    let run = &runs[best];
    let clamped = run
        .cond
        .iter()
        .flatten()
        .filter(|&&p| p <= PROB_EPS || p >= 1.0 - PROB_EPS)
        .count();
    let mut model = LatentClassModel {
        prior: run.prior.clone(),
        cond: run.cond.clone(),
        fit: None,
    };
    let min_prior = model.prior.iter().copied().fold(f64::INFINITY, f64::min);
    let informative = model.informative_treatments(INFORMATIVE_THRESHOLD).len();
    let degenerate =
        clamped > 0 || (k > 1 && (min_prior < 1e-3 || informative < m.min(3)));
    model.fit = Some(FitInfo {
        loglik: *run.trace.last().expect("at least one E-step"),
        iterations: run.trace.len(),
        restarts: config.restarts,
        best_restart: best,
        converged: run.converged,
        trace: run.trace.clone(),
        clamped,
        degenerate,
    });
    Ok(model.canonicalize())
}

/// Reason an identifiability precheck failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentifiabilityIssue {
    TooFewTreatments { m: usize, required: usize },
    TooManyParameters { parameters: usize, free_cells: usize },
    UninformativeTreatments { treatments: Vec<usize> },
    IndistinctClasses { pairs: Vec<(usize, usize)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub k: usize,
    pub m: usize,
    pub passed: bool,
    pub issues: Vec<IdentifiabilityIssue>,
    pub notes: Vec<String>,
}

/// Generic identifiability screen for a `k`-class model of `m` binary
/// treatments, optionally checking a concrete parameter value.
///
/// Structural conditions: at least three treatments and at least
/// `2⌈log2 k⌉ + 1` of them (the generic three-way-array condition for
/// binary latent-class models), and no more free parameters than free
/// cells. With a model: every treatment must separate the classes by more
/// than `threshold`, and every pair of classes must differ somewhere by
/// more than `threshold`.
pub fn identifiability_precheck(
    k: usize,
    m: usize,
    model: Option<&LatentClassModel>,
    threshold: f64,
) -> IdentifiabilityReport {
    let mut issues = Vec::new();
    let mut notes = vec![
        "treatment informativeness is used as a stand-in for faithfulness, which is not testable in general"
            .to_string(),
    ];
    if k >= 2 {
        let log2k = (usize::BITS - (k - 1).leading_zeros()) as usize;
        let required = (2 * log2k + 1).max(3);
        if m < required {
            issues.push(IdentifiabilityIssue::TooFewTreatments { m, required });
        }
        let parameters = k * (m + 1) - 1;
        let free_cells = if m < 63 { (1usize << m) - 1 } else { usize::MAX };
        if parameters > free_cells {
            issues.push(IdentifiabilityIssue::TooManyParameters {
                parameters,
                free_cells,
            });
        }
    } else {
        notes.push("a single class is identified by the treatment margins".into());
    }
    if let Some(model) = model {
        if model.k() != k || model.m() != m {
            notes.push(format!(
                "supplied model has k = {}, m = {}; checked as given",
                model.k(),
                model.m()
            ));
        }
        if model.k() >= 2 {
            let informative = model.informative_treatments(threshold);
            let flat: Vec<usize> = (0..model.m()).filter(|j| !informative.contains(j)).collect();
            if !flat.is_empty() {
                issues.push(IdentifiabilityIssue::UninformativeTreatments { treatments: flat });
            }
            let mut pairs = Vec::new();
            for x in 0..model.k() {
                for y in x + 1..model.k() {
                    let gap = model.cond[x]
                        .iter()
                        .zip(&model.cond[y])
                        .fold(0.0f64, |g, (a, b)| g.max((a - b).abs()));
                    if gap <= threshold {
                        pairs.push((x, y));
                    }
                }
            }
            if !pairs.is_empty() {
                issues.push(IdentifiabilityIssue::IndistinctClasses { pairs });
            }
        }
    }
    IdentifiabilityReport {
        k,
        m,
        passed: issues.is_empty(),
        issues,
        notes,
    }
}
