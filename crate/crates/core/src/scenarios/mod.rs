//! Data-generating processes with known causal structure, their analytic
//! oracles, and dataset I/O.
//!
//! Binary scenarios share one outcome model,
//!
//! ```text
//! Y = β0 + Σ_j β_j A_j + σ·Z + ε,   ε ~ N(0, noise_sd²),
//! ```
//!
//! where `Z` is the latent class index. They differ in how treatments are
//! drawn:
//!
//! * `fig1`: `Z ~ Cat(π)`, `A_j | Z ~ Bern(cond[Z][j])` independently.
//! * `fig2a`: three binary latents `Z_1, Z_2, Z_3` drawn i.i.d. from `π`, each
//!   driving only its own treatment; the composite class is
//!   `Z = Z_1 + 2 Z_2 + 4 Z_3`.
//! * `fig2b`: as `fig2a`, but `Z_2` also shifts the log-odds of `A_1` and `A_3`
//!   by `edge_strength · (2 Z_2 − 1)`.
//! * `fig3`: four treatments; `A_1` shifts the log-odds of `A_2` and `A_3` by
//!   `edge_strength · A_1`.
//! * `iv_binary`: instrument `W` uniform on `[0, L)`, independent of `Z`;
//!   `A_j | Z, W ~ Bern(iv.table[W][Z][j])`.
//!
//! `cf_triangular` is the continuous control-function system
//! `A = c0 + c_W·W + c_U·U`, `Y = β0 + β_1·A + σ·U + ε` with `U ~ N(0, 1)`
//! playing the role of the latent.
//!
//! Row `i` is drawn from its own stream derived from `(seed, i)`; see
//! [`crate::rng`].

mod dataset;
mod distribution;

pub use dataset::{load_csv, load_csv_as, save_csv, Dataset, Instrument, TreatmentKind};
pub use distribution::{load_table_csv, parse_table_csv, TreatmentDistribution};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor_model::{LatentClassModel, TreatmentModel};
use crate::parametric_id::FactorizedTreatmentModel;
use crate::pattern;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Fig1,
    Fig2a,
    Fig2b,
    Fig3,
    IvBinary,
    CfTriangular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvParams {
    pub levels: usize,
    /// `table[l][z][j] = P(A_j = 1 | Z = z, W = l)`.
    pub table: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfParams {
    pub levels: usize,
    pub intercept: f64,
    pub w_coef: f64,
    /// Must be positive: the treatment is strictly increasing in `U`.
    pub u_coef: f64,
}

/// Declarative description of a simulated study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: ScenarioKind,
    pub n: usize,
    pub seed: u64,
    /// Class prior (for `fig2*`, the distribution of each binary block latent).
    #[serde(default)]
    pub prior: Vec<f64>,
    /// `cond[z][j] = P(A_j = 1 | Z = z)` before any edge shifts.
    #[serde(default)]
    pub cond: Vec<Vec<f64>>,
    pub beta0: f64,
    pub beta: Vec<f64>,
    /// Confounding coefficient on the latent in the outcome.
    pub sigma: f64,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default = "default_edge_strength")]
    pub edge_strength: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iv: Option<IvParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cf: Option<CfParams>,
}

fn default_noise_sd() -> f64 {
    1.0
}

fn default_edge_strength() -> f64 {
    1.0
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl ScenarioSpec {
    /// Latent-class scenario with `m` treatments, two balanced classes and
    /// `P(A_j = 1 | Z) = 0.2 / 0.8`; `β_j = j`.
    pub fn fig1(m: usize, n: usize, seed: u64) -> Self {
        ScenarioSpec {
            scenario: ScenarioKind::Fig1,
            n,
            seed,
            prior: vec![0.5, 0.5],
            cond: vec![vec![0.2; m], vec![0.8; m]],
            beta0: 1.0,
            beta: (1..=m).map(|j| j as f64).collect(),
            sigma: 1.0,
            noise_sd: 1.0,
            edge_strength: 1.0,
            iv: None,
            cf: None,
        }
    }

    pub fn fig1_default() -> Self {
        ScenarioSpec::fig1(3, 50_000, 42)
    }

    pub fn fig2a_default() -> Self {
        ScenarioSpec {
            scenario: ScenarioKind::Fig2a,
            ..ScenarioSpec::fig1_default()
        }
    }

    pub fn fig2b_default() -> Self {
        ScenarioSpec {
            scenario: ScenarioKind::Fig2b,
            ..ScenarioSpec::fig1_default()
        }
    }

    pub fn fig3_default() -> Self {
        ScenarioSpec {
            scenario: ScenarioKind::Fig3,
            n: 100_000,
            ..ScenarioSpec::fig1(4, 100_000, 42)
        }
    }

    /// Two treatments, a four-level instrument shifting each treatment's
    /// log-odds by ±1.5 in a 2×2 layout.
    pub fn iv_default() -> Self {
        let base = [[0.3, 0.3], [0.7, 0.7]];
        let shifts = [[-1.5, -1.5], [1.5, -1.5], [-1.5, 1.5], [1.5, 1.5]];
        let table = shifts
            .iter()
            .map(|s| {
                base.iter()
                    .map(|row| (0..2).map(|j| logistic(logit(row[j]) + s[j])).collect())
                    .collect()
            })
            .collect();
        ScenarioSpec {
            scenario: ScenarioKind::IvBinary,
            n: 100_000,
            seed: 42,
            prior: vec![0.5, 0.5],
            cond: vec![],
            beta0: 1.0,
            beta: vec![1.0, 2.0],
            sigma: 1.0,
            noise_sd: 1.0,
            edge_strength: 1.0,
            iv: Some(IvParams { levels: 4, table }),
            cf: None,
        }
    }

    pub fn cf_default() -> Self {
        ScenarioSpec {
            scenario: ScenarioKind::CfTriangular,
            n: 50_000,
            seed: 42,
            prior: vec![],
            cond: vec![],
            beta0: 1.0,
            beta: vec![2.0],
            sigma: 1.0,
            noise_sd: 1.0,
            edge_strength: 1.0,
            iv: None,
            cf: Some(CfParams {
                levels: 10,
                intercept: 0.0,
                w_coef: 2.0,
                u_coef: 1.0,
            }),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ScenarioSpec = toml::from_str(text).map_err(|e| Error::Toml(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Toml(e.to_string()))
    }

    /// Number of treatments.
    pub fn m(&self) -> usize {
        self.beta.len()
    }

    pub fn is_binary(&self) -> bool {
        self.scenario != ScenarioKind::CfTriangular
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("n", "sample size must be at least 1"));
        }
        if !(self.noise_sd > 0.0) || !self.noise_sd.is_finite() {
            return Err(Error::config("noise_sd", "must be positive"));
        }
        let finite = |field: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, "must be finite"))
            }
        };
        finite("beta0", self.beta0)?;
        finite("sigma", self.sigma)?;
        finite("edge_strength", self.edge_strength)?;
        for &b in &self.beta {
            finite("beta", b)?;
        }
        let m = self.m();
        if m == 0 {
            return Err(Error::config("beta", "at least one treatment coefficient required"));
        }
        let check_prior = |prior: &[f64]| -> Result<()> {
            if prior.is_empty() {
                return Err(Error::config("prior", "empty class prior"));
            }
            if prior.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::config("prior", "entries must be nonnegative"));
            }
            let total: f64 = prior.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::config("prior", format!("sums to {total}, not 1")));
            }
            Ok(())
        };
        let check_bernoulli = |field: &str, p: f64| -> Result<()> {
            if p > 0.0 && p < 1.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("probability {p} outside (0, 1)")))
            }
        };
        let check_cond = |k: usize| -> Result<()> {
            if self.cond.len() != k {
                return Err(Error::config(
                    "cond",
                    format!("expected {k} rows, found {}", self.cond.len()),
                ));
            }
            for row in &self.cond {
                if row.len() != m {
                    return Err(Error::config(
                        "cond",
                        format!("row has {} entries, expected {m}", row.len()),
                    ));
                }
                for &p in row {
                    check_bernoulli("cond", p)?;
                }
            }
            Ok(())
        };
        match self.scenario {
            ScenarioKind::Fig1 => {
                check_prior(&self.prior)?;
                check_cond(self.prior.len())?;
                pattern::guard(m)?;
            }
            ScenarioKind::Fig2a | ScenarioKind::Fig2b => {
                if m != 3 {
                    return Err(Error::config("beta", "fig2 scenarios have exactly 3 treatments"));
                }
                if self.prior.len() != 2 {
                    return Err(Error::config("prior", "fig2 block latents are binary (2 entries)"));
                }
                check_prior(&self.prior)?;
                check_cond(2)?;
            }
            ScenarioKind::Fig3 => {
                if m != 4 {
                    return Err(Error::config("beta", "fig3 has exactly 4 treatments"));
                }
                check_prior(&self.prior)?;
                check_cond(self.prior.len())?;
            }
            ScenarioKind::IvBinary => {
                check_prior(&self.prior)?;
                pattern::guard(m)?;
                let iv = self
                    .iv
                    .as_ref()
                    .ok_or_else(|| Error::config("iv", "iv_binary requires an [iv] table"))?;
                if iv.levels == 0 || iv.table.len() != iv.levels {
                    return Err(Error::config("iv.table", "one table slice per instrument level"));
                }
                for slice in &iv.table {
                    if slice.len() != self.prior.len() || slice.iter().any(|r| r.len() != m) {
                        return Err(Error::config("iv.table", "each level needs a k×m table"));
                    }
                    for &p in slice.iter().flatten() {
                        check_bernoulli("iv.table", p)?;
                    }
                }
            }
            ScenarioKind::CfTriangular => {
                if m != 1 {
                    return Err(Error::config("beta", "cf_triangular has a single treatment"));
                }
                let cf = self
                    .cf
                    .as_ref()
                    .ok_or_else(|| Error::config("cf", "cf_triangular requires a [cf] table"))?;
                if cf.levels == 0 {
                    return Err(Error::config("cf.levels", "must be at least 1"));
                }
                if !(cf.u_coef > 0.0) {
                    return Err(Error::config("cf.u_coef", "must be positive (monotone in U)"));
                }
                finite("cf.w_coef", cf.w_coef)?;
                finite("cf.intercept", cf.intercept)?;
            }
        }
        Ok(())
    }

    /// The latent-class structure behind a binary scenario without
    /// treatment-on-treatment edges: composite prior and `cond` table.
    fn latent_class_tables(&self) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
        match self.scenario {
            ScenarioKind::Fig1 => Some((self.prior.clone(), self.cond.clone())),
            ScenarioKind::Fig2a | ScenarioKind::Fig2b => {
                let mut prior = Vec::with_capacity(8);
                let mut cond = Vec::with_capacity(8);
                for c in 0..8usize {
                    let z = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
                    prior.push(z.iter().map(|&zj| self.prior[zj]).product());
                    let row = (0..3)
                        .map(|j| {
                            let base = self.cond[z[j]][j];
                            if self.scenario == ScenarioKind::Fig2b && j != 1 {
                                let shift = self.edge_strength * (2.0 * z[1] as f64 - 1.0);
                                logistic(logit(base) + shift)
                            } else {
                                base
                            }
                        })
                        .collect();
                    cond.push(row);
                }
                Some((prior, cond))
            }
            _ => None,
        }
    }

    /// The data-generating treatment model for binary scenarios without an
    /// instrument.
    pub fn true_treatment_model(&self) -> Result<Box<dyn TreatmentModel>> {
        self.validate()?;
        if let Some((prior, cond)) = self.latent_class_tables() {
            return Ok(Box::new(LatentClassModel::new(prior, cond)?));
        }
        match self.scenario {
            ScenarioKind::Fig3 => Ok(Box::new(self.fig3_model())),
            _ => Err(Error::config(
                "scenario",
                "no latent treatment model without conditioning on the instrument",
            )),
        }
    }

    fn fig3_model(&self) -> FactorizedTreatmentModel {
        let s = self.edge_strength;
        let shifted = |p: f64| [p, logistic(logit(p) + s)];
        FactorizedTreatmentModel {
            prior: self.prior.clone(),
            a1: self.cond.iter().map(|r| r[0]).collect(),
            a2: self.cond.iter().map(|r| shifted(r[1])).collect(),
            a3: self.cond.iter().map(|r| shifted(r[2])).collect(),
            a4: self.cond.iter().map(|r| r[3]).collect(),
            fit: None,
        }
    }

    /// `E[Z]` under the scenario's latent distribution.
    pub fn latent_mean(&self) -> f64 {
        match self.scenario {
            ScenarioKind::CfTriangular => 0.0,
            ScenarioKind::Fig2a | ScenarioKind::Fig2b => {
                let (prior, _) = self.latent_class_tables().expect("fig2 tables");
                prior.iter().enumerate().map(|(c, p)| c as f64 * p).sum()
            }
            _ => self.prior.iter().enumerate().map(|(z, p)| z as f64 * p).sum(),
        }
    }

    /// `E[Y(a)]` for a binary pattern.
    pub fn mean_potential_outcome(&self, a: &[u8]) -> Result<f64> {
        pattern::check_len(a, self.m())?;
        let linear: f64 = self.beta.iter().zip(a).map(|(b, &x)| b * x as f64).sum();
        Ok(self.beta0 + linear + self.sigma * self.latent_mean())
    }
}

fn categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap at the top; take the last class with mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn bernoulli<R: Rng>(rng: &mut R, p: f64) -> f64 {
    if rng.random::<f64>() < p {
        1.0
    } else {
        0.0
    }
}

struct Row {
    treatments: Vec<f64>,
    y: f64,
    w: Option<usize>,
    z: f64,
}

/// Simulate `spec.n` rows. Deterministic in `(spec, spec.seed)` and
/// independent of the rayon thread count.
pub fn generate(spec: &ScenarioSpec) -> Result<Dataset> {
    spec.validate()?;
    let m = spec.m();
    let tables = spec.latent_class_tables();
    let fig3 = (spec.scenario == ScenarioKind::Fig3).then(|| spec.fig3_model());
    let outcome = |rng: &mut rand_chacha::ChaCha8Rng, a: &[f64], z: f64| -> f64 {
        let linear: f64 = spec.beta.iter().zip(a).map(|(b, x)| b * x).sum();
        let eps: f64 = rng.sample(StandardNormal);
        spec.beta0 + linear + spec.sigma * z + spec.noise_sd * eps
    };

    let rows: Vec<Row> = (0..spec.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(spec.seed, Stream::Rows, i as u64);
            match spec.scenario {
                ScenarioKind::Fig1 | ScenarioKind::Fig2a | ScenarioKind::Fig2b => {
                    let (prior, cond) = tables.as_ref().expect("latent-class tables");
                    let z = categorical(&mut rng, prior);
                    let a: Vec<f64> = cond[z].iter().map(|&p| bernoulli(&mut rng, p)).collect();
                    let y = outcome(&mut rng, &a, z as f64);
                    Row { treatments: a, y, w: None, z: z as f64 }
                }
                ScenarioKind::Fig3 => {
                    let fm = fig3.as_ref().expect("fig3 model");
                    let z = categorical(&mut rng, &fm.prior);
                    let a1 = bernoulli(&mut rng, fm.a1[z]);
                    let a2 = bernoulli(&mut rng, fm.a2[z][a1 as usize]);
                    let a3 = bernoulli(&mut rng, fm.a3[z][a1 as usize]);
                    let a4 = bernoulli(&mut rng, fm.a4[z]);
                    let a = vec![a1, a2, a3, a4];
                    let y = outcome(&mut rng, &a, z as f64);
                    Row { treatments: a, y, w: None, z: z as f64 }
                }
                ScenarioKind::IvBinary => {
                    let iv = spec.iv.as_ref().expect("validated");
                    let w = rng.random_range(0..iv.levels);
                    let z = categorical(&mut rng, &spec.prior);
                    let a: Vec<f64> = iv.table[w][z].iter().map(|&p| bernoulli(&mut rng, p)).collect();
                    let y = outcome(&mut rng, &a, z as f64);
                    Row { treatments: a, y, w: Some(w), z: z as f64 }
                }
                ScenarioKind::CfTriangular => {
                    let cf = spec.cf.as_ref().expect("validated");
                    let w = rng.random_range(0..cf.levels);
                    let u: f64 = rng.sample(StandardNormal);
                    let a = cf.intercept + cf.w_coef * w as f64 + cf.u_coef * u;
                    let y = outcome(&mut rng, &[a], u);
                    Row { treatments: vec![a], y, w: Some(w), z: u }
                }
            }
        })
        .collect();

    let kind = if spec.is_binary() {
        TreatmentKind::Binary
    } else {
        TreatmentKind::Continuous
    };
    let mut treatments = Vec::with_capacity(spec.n * m);
    let mut ys = Vec::with_capacity(spec.n);
    let mut ws = Vec::new();
    let mut zs = Vec::with_capacity(spec.n);
    for r in rows {
        treatments.extend(r.treatments);
        ys.push(r.y);
        zs.push(r.z);
        if let Some(w) = r.w {
            ws.push(w);
        }
    }
    let mut ds = Dataset::new(kind, m, treatments, ys)?.with_latent(zs)?;
    let levels = match spec.scenario {
        ScenarioKind::IvBinary => spec.iv.as_ref().map(|iv| iv.levels),
        ScenarioKind::CfTriangular => spec.cf.as_ref().map(|cf| cf.levels),
        _ => None,
    };
    if let Some(levels) = levels {
        ds = ds.with_instrument(ws, levels)?;
    }
    Ok(ds)
}

/// `Σ_j β_j (a_j − a′_j)`.
pub fn true_ate(spec: &ScenarioSpec, a: &[u8], a_prime: &[u8]) -> Result<f64> {
    let m = spec.m();
    pattern::check_len(a, m)?;
    pattern::check_len(a_prime, m)?;
    let diffs: Vec<f64> = a
        .iter()
        .zip(a_prime)
        .map(|(&x, &y)| x as f64 - y as f64)
        .collect();
    Ok(weighted_sum(&spec.beta, &diffs))
}

fn weighted_sum(beta: &[f64], diffs: &[f64]) -> f64 {
    beta.iter().zip(diffs).map(|(b, d)| b * d).sum()
}

/// `Σ_{a ∈ {0,1}^m} E[Y(a)] (p1(a) − p0(a))` by enumeration of the support.
///
/// The linear outcome makes the sum collapse onto enumerated treatment
/// marginals plus the intercept times the mass difference; evaluating it in
/// that form keeps point masses bit-identical to [`true_ate`].
pub fn true_delta(
    spec: &ScenarioSpec,
    p1: &TreatmentDistribution,
    p0: &TreatmentDistribution,
) -> Result<f64> {
    let m = spec.m();
    pattern::guard(m)?;
    if !spec.is_binary() {
        return Err(Error::config("scenario", "distributional contrasts need binary treatments"));
    }
    if p1.m() != m || p0.m() != m {
        return Err(Error::config("distribution", "distribution dimension differs from m"));
    }
    let mut marg1 = vec![0.0; m];
    let mut marg0 = vec![0.0; m];
    let mut mass1 = 0.0;
    let mut mass0 = 0.0;
    for a in pattern::enumerate(m)? {
        let (q1, q0) = (p1.prob(&a), p0.prob(&a));
        mass1 += q1;
        mass0 += q0;
        for j in 0..m {
            if a[j] == 1 {
                marg1[j] += q1;
                marg0[j] += q0;
            }
        }
    }
    let diffs: Vec<f64> = marg1.iter().zip(&marg0).map(|(x, y)| x - y).collect();
    let constant = spec.beta0 + spec.sigma * spec.latent_mean();
    Ok(weighted_sum(&spec.beta, &diffs) + constant * (mass1 - mass0))
}
