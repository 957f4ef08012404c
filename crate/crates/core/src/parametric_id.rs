//! Additive outcome models identified by linear independence.
//!
//! With `E{Y(a) | Z} = β_0 + Σ_j β_j b_j(a_j) + σ g(Z)` the observed
//! regression is `E(Y | A) = β_0 + Σ_j β_j b_j(A_j) + σ E{g(Z) | A}`, so `β`
//! is identified whenever `E{g(Z) | A}` is not a linear combination of the
//! `b_j(A_j)` over the treatment support. Also hosts the factorized
//! treatment model in which `A_1` causes `A_2` and `A_3`.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::bootstrap::{bootstrap_draws, BootstrapConfig, BootstrapDraws};
use crate::error::{Error, Result};
use crate::factor_model::{FitConfig, FitInfo, TreatmentModel, PROB_EPS};
use crate::linalg::{least_squares, rank_report, RankReport};
use crate::pattern;
use crate::report::{digest_of, Coefficient, Contrast, EstimateReport, Provenance};
use crate::rng::{stream_rng, Stream};
use crate::scenarios::{Dataset, TreatmentKind};

/// Basis function for one binary treatment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Basis {
    #[default]
    Identity,
    Values { zero: f64, one: f64 },
}

impl Basis {
    pub fn eval(&self, a: u8) -> f64 {
        match (self, a) {
            (Basis::Identity, _) => a as f64,
            (Basis::Values { zero, .. }, 0) => *zero,
            (Basis::Values { one, .. }, _) => *one,
        }
    }
}

/// Basis choices for the additive model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct BasisSpec {
    /// One basis per treatment; empty means identity throughout.
    pub treatments: Vec<Basis>,
    /// `g(z)` for each class; `None` uses the class index.
    pub latent: Option<Vec<f64>>,
    /// Known confounding strength `σ`. The `E{g(Z) | A}` column is then moved
    /// to the outcome instead of being estimated.
    pub sigma_known: Option<f64>,
}

impl BasisSpec {
    pub fn identity() -> Self {
        BasisSpec::default()
    }

    pub fn with_sigma_known(sigma: f64) -> Self {
        BasisSpec {
            sigma_known: Some(sigma),
            ..BasisSpec::default()
        }
    }

    pub fn treatment_basis(&self, j: usize) -> Basis {
        self.treatments.get(j).copied().unwrap_or_default()
    }

    pub fn latent_values(&self, k: usize) -> Result<Vec<f64>> {
        match &self.latent {
            None => Ok((0..k).map(|z| z as f64).collect()),
            Some(g) if g.len() == k => Ok(g.clone()),
            Some(g) => Err(Error::config(
                "latent",
                format!("{} values given for {k} classes", g.len()),
            )),
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        if !self.treatments.is_empty() && self.treatments.len() != m {
            return Err(Error::config(
                "treatments",
                format!("{} basis functions given for {m} treatments", self.treatments.len()),
            ));
        }
        if let Some(s) = self.sigma_known {
            if !s.is_finite() {
                return Err(Error::config("sigma_known", "must be finite"));
            }
        }
        Ok(())
    }

    fn row(&self, a: &[u8]) -> Vec<f64> {
        a.iter()
            .enumerate()
            .map(|(j, &v)| self.treatment_basis(j).eval(v))
            .collect()
    }
}

fn column_names(m: usize, with_latent: bool) -> Vec<String> {
    let mut names = vec!["const".to_string()];
    names.extend((1..=m).map(|j| format!("A{j}")));
    if with_latent {
        names.push("Eg".into());
    }
    names
}

/// Rank of the `p(a)`-weighted design `[1, b(a), E{g(Z) | A = a}]` over all
/// `2^m` patterns; the last column is dropped when `σ` is known.
pub fn test_linear_independence<M: TreatmentModel + ?Sized>(model: &M, basis: &BasisSpec) -> Result<RankReport> {
    let m = model.m();
    basis.validate(m)?;
    let g = basis.latent_values(model.k())?;
    let with_latent = basis.sigma_known.is_none();
    let names = column_names(m, with_latent);
    let patterns = pattern::enumerate(m)?;
    let rows: Vec<Vec<f64>> = patterns
        .iter()
        .map(|a| {
            let w = model.pattern_prob(a).sqrt();
            let mut r = vec![1.0];
            r.extend(basis.row(a));
            if with_latent {
                r.push(model.posterior_mean(a, &g));
            }
            r.into_iter().map(|v| v * w).collect()
        })
        .collect();
    let x = DMatrix::from_fn(rows.len(), names.len(), |i, c| rows[i][c]);
    Ok(rank_report(&x, &names))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct AdditiveOptions {
    pub bootstrap: BootstrapConfig,
}

/// A fitted additive outcome model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveFit {
    m: usize,
    pub names: Vec<String>,
    /// `[β_0, β_1..β_m]`, then `σ̂` when it was estimated.
    pub coefficients: Vec<f64>,
    pub se: Vec<f64>,
    pub basis: BasisSpec,
    pub rank: Option<RankReport>,
    pub draws: BootstrapDraws,
    pub method: String,
    pub seed: u64,
    pub config_digest: String,
}

impl AdditiveFit {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn beta(&self) -> &[f64] {
        &self.coefficients[1..=self.m()]
    }

    /// Estimated `σ`, when it was a free coefficient.
    pub fn sigma(&self) -> Option<f64> {
        (self.coefficients.len() > self.m() + 1).then(|| self.coefficients[self.m() + 1])
    }

    fn contrast_of(&self, coef: &[f64], a: &[u8], a_prime: &[u8]) -> f64 {
        let (x, y) = (self.basis.row(a), self.basis.row(a_prime));
        coef[1..=self.m()]
            .iter()
            .zip(x.iter().zip(&y))
            .map(|(c, (u, v))| c * (u - v))
            .sum()
    }

    /// `Σ_j β̂_j (b_j(a_j) − b_j(a′_j))`.
    pub fn ate(&self, a: &[u8], a_prime: &[u8]) -> Result<f64> {
        pattern::check_len(a, self.m())?;
        pattern::check_len(a_prime, self.m())?;
        Ok(self.contrast_of(&self.coefficients, a, a_prime))
    }

    pub fn report(&self, a: &[u8], a_prime: &[u8]) -> Result<EstimateReport> {
        let estimate = self.ate(a, a_prime)?;
        let se = self.draws.se_of(|c| self.contrast_of(c, a, a_prime));
        let mut notes = Vec::new();
        if let Some(s) = self.basis.sigma_known {
            notes.push(format!("sigma fixed at {s}"));
        }
        Ok(EstimateReport {
            estimand: "ate".into(),
            method: self.method.clone(),
            contrast: Contrast::Patterns {
                a: pattern::format(a),
                a_prime: pattern::format(a_prime),
            },
            estimate,
            se,
            replicates: self.draws.replicates_used(),
            failed_replicates: self.draws.failures,
            coefficients: self.coefficient_table(),
            diagnostics: Default::default(),
            notes,
            provenance: Provenance {
                seed: self.seed,
                config_digest: self.config_digest.clone(),
            },
        })
    }

    pub fn coefficient_table(&self) -> Vec<Coefficient> {
        self.names
            .iter()
            .zip(self.coefficients.iter().zip(&self.se))
            .map(|(n, (&e, &s))| Coefficient {
                name: n.clone(),
                estimate: e,
                se: s,
            })
            .collect()
    }
}

fn fit_design(
    x: DMatrix<f64>,
    y: Vec<f64>,
    names: Vec<String>,
    basis: BasisSpec,
    rank: Option<RankReport>,
    options: &AdditiveOptions,
    method: &str,
) -> Result<AdditiveFit> {
    let coefficients = least_squares(&x, &y, &names)?;
    let draws = bootstrap_draws(x.nrows(), coefficients.len(), &options.bootstrap, |rows| {
        let xs = DMatrix::from_fn(rows.len(), x.ncols(), |r, c| x[(rows[r], c)]);
        let ys: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        least_squares(&xs, &ys, &names)
    });
    let se = draws.se(coefficients.len());
    Ok(AdditiveFit {
        m: names.len() - 1 - names.iter().any(|n| n == "Eg") as usize,
        config_digest: digest_of(&(&basis, options)),
        names,
        coefficients,
        se,
        basis,
        rank,
        draws,
        method: method.into(),
        seed: options.bootstrap.seed,
    })
}

/// Fit the additive model with `E{g(Z) | A}` taken from `model`'s posterior.
/// Fails with an identification error when the linear-independence test
/// does not pass.
pub fn fit_additive<M: TreatmentModel + ?Sized>(
    dataset: &Dataset,
    model: &M,
    basis: &BasisSpec,
    options: &AdditiveOptions,
) -> Result<AdditiveFit> {
    dataset.require_binary()?;
    let m = dataset.m();
    if model.m() != m {
        return Err(Error::InvalidData(format!(
            "model has {} treatments, dataset has {m}",
            model.m()
        )));
    }
    let rank = test_linear_independence(model, basis)?;
    if !rank.full_rank {
        return Err(Error::identification(
            format!(
                "E{{g(Z) | A}} is linear in the treatment basis (rank {} of {})",
                rank.rank,
                rank.columns.len()
            ),
            rank.collinear.clone(),
        ));
    }
    let g = basis.latent_values(model.k())?;
    let with_latent = basis.sigma_known.is_none();
    let names = column_names(m, with_latent);
    // One posterior mean per pattern so equal patterns share a value.
    let eg: Vec<f64> = pattern::enumerate(m)?
        .iter()
        .map(|a| model.posterior_mean(a, &g))
        .collect();
    let n = dataset.n();
    let mut x = DMatrix::zeros(n, names.len());
    let mut y = dataset.outcome().to_vec();
    for i in 0..n {
        let a = dataset.pattern(i);
        x[(i, 0)] = 1.0;
        for (j, v) in basis.row(&a).into_iter().enumerate() {
            x[(i, 1 + j)] = v;
        }
        let e = eg[pattern::encode(&a)];
        match basis.sigma_known {
            None => x[(i, m + 1)] = e,
            Some(s) => y[i] -= s * e,
        }
    }
    fit_design(x, y, names, basis.clone(), Some(rank), options, "parametric")
}

/// Additive-model ATE for the contrast `(a, a′)`.
pub fn estimate_additive<M: TreatmentModel + ?Sized>(
    dataset: &Dataset,
    model: &M,
    basis: &BasisSpec,
    a: &[u8],
    a_prime: &[u8],
    options: &AdditiveOptions,
) -> Result<EstimateReport> {
    fit_additive(dataset, model, basis, options)?.report(a, a_prime)
}

/// Regression of `Y` on `[1, b(A)]` with no confounder adjustment.
pub fn naive_regression(dataset: &Dataset, basis: &BasisSpec, options: &AdditiveOptions) -> Result<AdditiveFit> {
    let m = dataset.m();
    basis.validate(m)?;
    let names = column_names(m, false);
    let n = dataset.n();
    let mut x = DMatrix::zeros(n, names.len());
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for j in 0..m {
            let v = dataset.treatment(i, j);
            x[(i, 1 + j)] = if dataset.kind() == TreatmentKind::Binary {
                basis.treatment_basis(j).eval(v as u8)
            } else {
                v
            };
        }
    }
    let basis = BasisSpec {
        sigma_known: None,
        latent: None,
        ..basis.clone()
    };
    fit_design(x, dataset.outcome().to_vec(), names, basis, None, options, "naive")
}

/// Coefficients recovered from a fully enumerated population: the
/// `p(a)`-weighted regression of `mean_outcome(a)` on the additive design.
pub fn population_fit<M, F>(model: &M, basis: &BasisSpec, mean_outcome: F) -> Result<Vec<f64>>
where
    M: TreatmentModel + ?Sized,
    F: Fn(&[u8]) -> f64,
{
    let m = model.m();
    basis.validate(m)?;
    let g = basis.latent_values(model.k())?;
    let with_latent = basis.sigma_known.is_none();
    let names = column_names(m, with_latent);
    let patterns = pattern::enumerate(m)?;
    let mut x = DMatrix::zeros(patterns.len(), names.len());
    let mut y = Vec::with_capacity(patterns.len());
    for (r, a) in patterns.iter().enumerate() {
        let w = model.pattern_prob(a).sqrt();
        let e = model.posterior_mean(a, &g);
        x[(r, 0)] = w;
        for (j, v) in basis.row(a).into_iter().enumerate() {
            x[(r, 1 + j)] = w * v;
        }
        let mut target = mean_outcome(a);
        match basis.sigma_known {
            None => x[(r, m + 1)] = w * e,
            Some(s) => target -= s * e,
        }
        y.push(w * target);
    }
    least_squares(&x, &y, &names)
}

/// Treatment model `p(Z) p(A_1|Z) p(A_2|A_1,Z) p(A_3|A_1,Z) p(A_4|Z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizedTreatmentModel {
    pub prior: Vec<f64>,
    /// `P(A_1 = 1 | Z = z)`.
    pub a1: Vec<f64>,
    /// `P(A_2 = 1 | Z = z, A_1 = v)` at `[z][v]`.
    pub a2: Vec<[f64; 2]>,
    pub a3: Vec<[f64; 2]>,
    pub a4: Vec<f64>,
    #[serde(skip)]
    pub fit: Option<FitInfo>,
}

fn ln_bern(p: f64, a: u8) -> f64 {
    if a == 1 {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

impl TreatmentModel for FactorizedTreatmentModel {
    fn k(&self) -> usize {
        self.prior.len()
    }

    fn m(&self) -> usize {
        4
    }

    fn prior(&self) -> &[f64] {
        &self.prior
    }

    fn log_conditional(&self, a: &[u8], z: usize) -> f64 {
        let v = a[0] as usize;
        ln_bern(self.a1[z], a[0]) + ln_bern(self.a2[z][v], a[1]) + ln_bern(self.a3[z][v], a[2]) + ln_bern(self.a4[z], a[3])
    }
}

impl FactorizedTreatmentModel {
    pub fn validate(&self) -> Result<()> {
        let k = self.prior.len();
        if k == 0 {
            return Err(Error::config("prior", "at least one class required"));
        }
        if (self.prior.iter().sum::<f64>() - 1.0).abs() > 1e-12 || self.prior.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::config("prior", "must lie on the simplex"));
        }
        if self.a1.len() != k || self.a2.len() != k || self.a3.len() != k || self.a4.len() != k {
            return Err(Error::config("tables", "one entry per class required"));
        }
        if self.params().iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::config("tables", "probabilities must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Per-class parameter vector `(a1, a2[0], a2[1], a3[0], a3[1], a4)`.
    fn class_params(&self, z: usize) -> [f64; 6] {
        [
            self.a1[z],
            self.a2[z][0],
            self.a2[z][1],
            self.a3[z][0],
            self.a3[z][1],
            self.a4[z],
        ]
    }

    fn params(&self) -> Vec<f64> {
        (0..self.prior.len()).flat_map(|z| self.class_params(z)).collect()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        FactorizedTreatmentModel {
            prior: perm.iter().map(|&z| self.prior[z]).collect(),
            a1: perm.iter().map(|&z| self.a1[z]).collect(),
            a2: perm.iter().map(|&z| self.a2[z]).collect(),
            a3: perm.iter().map(|&z| self.a3[z]).collect(),
            a4: perm.iter().map(|&z| self.a4[z]).collect(),
            fit: self.fit.clone(),
        }
    }

    /// Order classes by `P(A_1 = 1 | Z)`, then the remaining tables, then the prior.
    pub fn canonicalize(&self) -> Self {
        let mut order: Vec<usize> = (0..self.prior.len()).collect();
        order.sort_by(|&x, &y| {
            self.class_params(x)
                .iter()
                .zip(self.class_params(y).iter())
                .map(|(a, b)| a.total_cmp(b))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or_else(|| self.prior[x].total_cmp(&self.prior[y]))
        });
        self.permuted(&order)
    }

    /// Largest absolute difference between matching tables.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let p = self.params().into_iter().chain(self.prior.iter().copied());
        let q = other.params().into_iter().chain(other.prior.iter().copied());
        p.zip(q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

struct FactorizedRun {
    model: FactorizedTreatmentModel,
    trace: Vec<f64>,
    converged: bool,
}

fn factorized_em(
    cells: &[(Vec<u8>, f64)],
    mut model: FactorizedTreatmentModel,
    config: &FitConfig,
) -> FactorizedRun {
    let k = model.k();
    let total: f64 = cells.iter().map(|(_, c)| c).sum();
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let clamp = |p: f64| p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    for iter in 0..config.max_iter {
        // Sufficient statistics per class: weight, A1 ones, then for each
        // A1 value the weight and the A2 / A3 ones, and A4 ones.
        let mut w = vec![0.0; k];
        let mut s1 = vec![0.0; k];
        let mut w_by = vec![[0.0; 2]; k];
        let mut s2 = vec![[0.0; 2]; k];
        let mut s3 = vec![[0.0; 2]; k];
        let mut s4 = vec![0.0; k];
        let mut ll = 0.0;
        for (a, count) in cells {
            let lj = model.log_joint(a);
            let max = lj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = lj.iter().map(|v| (v - max).exp()).collect();
            let norm: f64 = e.iter().sum();
            ll += count * (max + norm.ln());
            let v = a[0] as usize;
            for z in 0..k {
                let r = count * e[z] / norm;
                w[z] += r;
                s1[z] += r * a[0] as f64;
                w_by[z][v] += r;
                s2[z][v] += r * a[1] as f64;
                s3[z][v] += r * a[2] as f64;
                s4[z] += r * a[3] as f64;
            }
        }
        if let Some(&prev) = trace.last() {
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
            model.prior[z] = w[z] / total;
            if w[z] <= 0.0 {
                continue;
            }
            model.a1[z] = clamp(s1[z] / w[z]);
            model.a4[z] = clamp(s4[z] / w[z]);
            for v in 0..2 {
                if w_by[z][v] > 0.0 {
                    model.a2[z][v] = clamp(s2[z][v] / w_by[z][v]);
                    model.a3[z][v] = clamp(s3[z][v] / w_by[z][v]);
                }
            }
        }
    }
    FactorizedRun {
        model,
        trace,
        converged,
    }
}

fn factorized_start(k: usize, seed: u64, restart: usize) -> FactorizedTreatmentModel {
    let mut rng = stream_rng(seed, Stream::Restarts, restart as u64);
    let mut u = || rng.random_range(0.05..0.95);
    let a1 = (0..k).map(|_| u()).collect();
    let a2 = (0..k).map(|_| [u(), u()]).collect();
    let a3 = (0..k).map(|_| [u(), u()]).collect();
    let a4 = (0..k).map(|_| u()).collect();
    let mut rng = stream_rng(seed ^ 0x5eed, Stream::Restarts, restart as u64);
    let draws: Vec<f64> = (0..k).map(|_| Exp1.sample(&mut rng)).collect();
    let total: f64 = draws.iter().sum();
    FactorizedTreatmentModel {
        prior: draws.iter().map(|d| d / total).collect(),
        a1,
        a2,
        a3,
        a4,
        fit: None,
    }
}

/// Log-likelihood of the one-class factorization, available in closed form.
fn single_class_loglik(cells: &[(Vec<u8>, f64)]) -> f64 {
    let one = FactorizedTreatmentModel {
        prior: vec![1.0],
        a1: vec![0.5],
        a2: vec![[0.5; 2]],
        a3: vec![[0.5; 2]],
        a4: vec![0.5],
        fit: None,
    };
    let cfg = FitConfig {
        max_iter: 2,
        ..FitConfig::default()
    };
    // With one class a single M-step reaches the closed-form MLE.
    let fitted = factorized_em(cells, one, &cfg).model;
    cells.iter().map(|(a, c)| c * fitted.log_pattern_prob(a)).sum()
}

/// Fit the factorized treatment model by EM with restarts.
///
/// The fit is flagged degenerate when parameters hit the clamp, a class is
/// nearly empty, or the `k`-class fit does not improve on a single class
/// by more than the 0.999 chi-square quantile for the added parameters.
pub fn fit_factorized_model(dataset: &Dataset, k: usize, config: &FitConfig) -> Result<FactorizedTreatmentModel> {
    dataset.require_binary()?;
    if dataset.m() != 4 {
        return Err(Error::config(
            "m",
            format!("the factorized model is defined for 4 treatments, got {}", dataset.m()),
        ));
    }
    config.validate()?;
    if k == 0 {
        return Err(Error::config("k", "at least one class required"));
    }
    let counts = dataset.pattern_counts()?;
    let cells: Vec<(Vec<u8>, f64)> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0.0)
        .map(|(code, &c)| (pattern::decode(code, 4), c))
        .collect();
    if cells.is_empty() {
        return Err(Error::InvalidData("no observations".into()));
    }
    let runs: Vec<FactorizedRun> = (0..config.restarts)
        .into_par_iter()
        .map(|r| factorized_em(&cells, factorized_start(k, config.seed, r), config))
        .collect();
    let mut best = 0;
    for (r, run) in runs.iter().enumerate() {
        if run.trace.last() > runs[best].trace.last() {
            best = r;
        }
    }
    let run = &runs[best];
    let mut model = run.model.clone();
    let loglik = *run.trace.last().expect("at least one E-step");
    let clamped = model
        .params()
        .iter()
        .filter(|&&p| p <= PROB_EPS || p >= 1.0 - PROB_EPS)
        .count();
    let min_prior = model.prior.iter().copied().fold(f64::INFINITY, f64::min);
    let lr = 2.0 * (loglik - single_class_loglik(&cells));
    let extra = (7 * (k - 1)) as f64;
    let weak = k > 1 && lr < ChiSquared::new(extra).map(|d| d.inverse_cdf(0.999)).unwrap_or(0.0);
    model.fit = Some(FitInfo {
        loglik,
        iterations: run.trace.len(),
        restarts: config.restarts,
        best_restart: best,
        converged: run.converged,
        trace: run.trace.clone(),
        clamped,
        degenerate: clamped > 0 || (k > 1 && min_prior < 1e-3) || weak,
    });
    Ok(model.canonicalize())
}

/// Effects of `A_2, A_3, A_4` with `A_1` held fixed, from the regression of
/// `Y` on `[1, A_1..A_4, E(Z | A)]` under the factorized model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalEffects {
    /// `A2`, `A3`, `A4`.
    pub effects: Vec<Coefficient>,
    /// The `A_1` coefficient: the direct path only, since `A_1` also acts
    /// through `A_2` and `A_3`. Not a total effect.
    pub a1_direct: Coefficient,
    pub a1_caveat: String,
    pub sigma: Coefficient,
    pub rank: RankReport,
    pub replicates: usize,
    pub failed_replicates: usize,
}

pub fn estimate_conditional_effects(
    dataset: &Dataset,
    model: &FactorizedTreatmentModel,
    options: &AdditiveOptions,
) -> Result<ConditionalEffects> {
    let fit = fit_additive(dataset, model, &BasisSpec::identity(), options)?;
    let table = fit.coefficient_table();
    Ok(ConditionalEffects {
        effects: table[2..5].to_vec(),
        a1_direct: table[1].clone(),
        a1_caveat: "A1 also affects A2 and A3; this coefficient is its direct effect only, not a total effect".into(),
        sigma: table[5].clone(),
        rank: fit.rank.clone().expect("rank tested"),
        replicates: fit.draws.replicates_used(),
        failed_replicates: fit.draws.failures,
    })
}
