//! Control-function estimator for one continuous treatment.
//!
//! With `A = s_2(W, U)` strictly increasing in `U`, the conditional CDF
//! `C = F_{A|W}(A)` is a function of `U` alone, so conditioning the outcome
//! regression on `C` removes the confounding through `U`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bootstrap::{bootstrap_draws, BootstrapConfig};
use crate::error::{Error, Result};
use crate::linalg::least_squares;
use crate::report::{digest_of, Coefficient, Contrast, EstimateReport, Provenance};
use crate::scenarios::Dataset;

/// Strata smaller than this produce a warning.
pub const SMALL_STRATUM: usize = 10;

/// How the control value enters the second stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CfBasis {
    /// `V = Φ⁻¹(C)`: linear in `U` when `U` is Gaussian.
    #[default]
    NormalScore,
    /// `V = C`.
    Raw,
}

impl CfBasis {
    fn transform(&self, c: f64) -> f64 {
        match self {
            CfBasis::NormalScore => Normal::standard().inverse_cdf(c),
            CfBasis::Raw => c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct CfOptions {
    pub basis: CfBasis,
    pub bootstrap: BootstrapConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlValues {
    pub c: Vec<f64>,
    pub stratum_sizes: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Within-stratum midrank CDF: `C_i = (r_i − 0.5) / n_s` with tied values
/// sharing their average rank.
pub fn control_values(treatment: &[f64], strata: &[usize], levels: usize) -> Result<ControlValues> {
    if treatment.len() != strata.len() {
        return Err(Error::InvalidData("treatment and instrument lengths differ".into()));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); levels];
    for (i, &s) in strata.iter().enumerate() {
        if s >= levels {
            return Err(Error::InvalidData(format!("row {i}: instrument level {s} out of range")));
        }
        members[s].push(i);
    }
    let mut c = vec![0.0; treatment.len()];
    let mut warnings = Vec::new();
    for (s, rows) in members.iter_mut().enumerate() {
        let ns = rows.len();
        if ns == 0 {
            continue;
        }
        if ns < 2 {
            return Err(Error::InvalidData(format!(
                "instrument stratum {s} has {ns} row; at least 2 are needed"
            )));
        }
        if ns < SMALL_STRATUM {
            warnings.push(format!("instrument stratum {s} has only {ns} rows"));
        }
        rows.sort_by(|&x, &y| treatment[x].total_cmp(&treatment[y]));
        let mut start = 0;
        while start < ns {
            let mut end = start + 1;
            while end < ns && treatment[rows[end]] == treatment[rows[start]] {
                end += 1;
            }
            // Positions start+1..=end share the average rank.
            let rank = (start + 1 + end) as f64 / 2.0;
            for &i in &rows[start..end] {
                c[i] = (rank - 0.5) / ns as f64;
            }
            start = end;
        }
    }
    Ok(ControlValues {
        c,
        stratum_sizes: members.iter().map(|r| r.len()).collect(),
        warnings,
    })
}

const CF_NAMES: [&str; 6] = ["const", "A", "V", "A^2", "V^2", "A*V"];

#[derive(Debug, Clone, PartialEq)]
pub struct ControlFunctionFit {
    /// `C_i` per row.
    pub control: Vec<f64>,
    pub basis: CfBasis,
    /// Coefficients on `[1, A, V, A², V², A·V]`.
    pub coefficients: Vec<f64>,
    pub stratum_sizes: Vec<usize>,
    pub warnings: Vec<String>,
    mean_v: f64,
}

impl ControlFunctionFit {
    pub fn names() -> Vec<String> {
        CF_NAMES.iter().map(|s| s.to_string()).collect()
    }

    /// Fitted `E(Y | A = a, V = v)`.
    pub fn surface(&self, a: f64, v: f64) -> f64 {
        let c = &self.coefficients;
        c[0] + c[1] * a + c[2] * v + c[3] * a * a + c[4] * v * v + c[5] * a * v
    }

    /// `(1/n) Σ_i [h(a, V_i) − h(a′, V_i)]`.
    pub fn ate(&self, a: f64, a_prime: f64) -> f64 {
        let c = &self.coefficients;
        c[1] * (a - a_prime) + c[3] * (a * a - a_prime * a_prime) + c[5] * (a - a_prime) * self.mean_v
    }
}

fn fit_rows(treatment: &[f64], y: &[f64], strata: &[usize], levels: usize, basis: CfBasis) -> Result<ControlFunctionFit> {
    let cv = control_values(treatment, strata, levels)?;
    let n = treatment.len();
    let v: Vec<f64> = cv.c.iter().map(|&c| basis.transform(c)).collect();
    let x = DMatrix::from_fn(n, 6, |i, col| {
        let (a, v) = (treatment[i], v[i]);
        match col {
            0 => 1.0,
            1 => a,
            2 => v,
            3 => a * a,
            4 => v * v,
            _ => a * v,
        }
    });
    let coefficients = least_squares(&x, y, &ControlFunctionFit::names())?;
    Ok(ControlFunctionFit {
        control: cv.c,
        basis,
        coefficients,
        stratum_sizes: cv.stratum_sizes,
        warnings: cv.warnings,
        mean_v: v.iter().sum::<f64>() / n as f64,
    })
}

fn single_treatment(dataset: &Dataset) -> Result<(&[usize], usize)> {
    if dataset.m() != 1 {
        return Err(Error::config(
            "m",
            format!("the control function takes a single treatment, got {}", dataset.m()),
        ));
    }
    let inst = dataset
        .instrument()
        .ok_or_else(|| Error::InvalidData("dataset has no instrument column W".into()))?;
    Ok((&inst.values, inst.levels))
}

/// Compute control values and fit the second stage on the full sample.
pub fn control_function_fit(dataset: &Dataset, basis: CfBasis) -> Result<ControlFunctionFit> {
    let (strata, levels) = single_treatment(dataset)?;
    fit_rows(&dataset.column(0), dataset.outcome(), strata, levels, basis)
}

/// Control-function ATE of moving the treatment from `a_prime` to `a`. The
/// bootstrap recomputes the control values within each resample.
pub fn cf_ate(dataset: &Dataset, a: f64, a_prime: f64, options: &CfOptions) -> Result<EstimateReport> {
    let (strata, levels) = single_treatment(dataset)?;
    let treatment = dataset.column(0);
    let y = dataset.outcome();
    let fit = fit_rows(&treatment, y, strata, levels, options.basis)?;
    let draws = bootstrap_draws(dataset.n(), 7, &options.bootstrap, |rows| {
        let t: Vec<f64> = rows.iter().map(|&i| treatment[i]).collect();
        let ys: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        let s: Vec<usize> = rows.iter().map(|&i| strata[i]).collect();
        let f = fit_rows(&t, &ys, &s, levels, options.basis)?;
        let mut out = f.coefficients.clone();
        out.push(f.ate(a, a_prime));
        Ok(out)
    });
    let se = draws.se(7);
    let mut notes = fit.warnings.clone();
    notes.push(format!(
        "second stage: quadratic surface in (A, V) with V = {}",
        match options.basis {
            CfBasis::NormalScore => "inverse-normal of the midrank CDF",
            CfBasis::Raw => "the midrank CDF",
        }
    ));
    Ok(EstimateReport {
        estimand: "ate".into(),
        method: "cf".into(),
        contrast: Contrast::Values { a, a_prime },
        estimate: fit.ate(a, a_prime),
        se: se[6],
        replicates: draws.replicates_used(),
        failed_replicates: draws.failures,
        coefficients: CF_NAMES
            .iter()
            .zip(fit.coefficients.iter().zip(&se))
            .map(|(n, (&e, &s))| Coefficient {
                name: n.to_string(),
                estimate: e,
                se: s,
            })
            .collect(),
        diagnostics: Default::default(),
        notes,
        provenance: Provenance {
            seed: options.bootstrap.seed,
            config_digest: digest_of(options),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinCoverage {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub c_min: f64,
    pub c_max: f64,
    /// Fraction of marginal-decile intervals of `C` that this bin reaches.
    pub coverage: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfOverlapReport {
    pub c_min: f64,
    pub c_max: f64,
    /// Marginal deciles of `C`, 0% to 100%.
    pub deciles: Vec<f64>,
    pub bins: Vec<BinCoverage>,
    pub threshold: f64,
    pub passed: bool,
}

/// Compare the spread of `C` within equal-count bins of the treatment with
/// its marginal spread. A bin is flagged when it reaches fewer than 80% of
/// the ten marginal-decile intervals of `C`.
pub fn cf_overlap_check(fit: &ControlFunctionFit, dataset: &Dataset, bins: usize) -> Result<CfOverlapReport> {
    let a = dataset.column(0);
    let c = &fit.control;
    if a.len() != c.len() || a.is_empty() {
        return Err(Error::InvalidData("fit and dataset differ in length".into()));
    }
    let bins = bins.clamp(1, a.len());
    let threshold = 0.8;
    let n = a.len();
    let mut sorted_c = c.clone();
    sorted_c.sort_by(f64::total_cmp);
    let quantile = |q: f64| sorted_c[((q * (n - 1) as f64).round() as usize).min(n - 1)];
    let deciles: Vec<f64> = (0..=10).map(|d| quantile(d as f64 / 10.0)).collect();
    let interval_of = |v: f64| (1..10).filter(|&d| v > deciles[d]).count();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[x].total_cmp(&a[y]));
    let mut out = Vec::with_capacity(bins);
    for b in 0..bins {
        let rows = &order[b * n / bins..(b + 1) * n / bins];
        let mut hit = [false; 10];
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in rows {
            hit[interval_of(c[i])] = true;
            lo = lo.min(c[i]);
            hi = hi.max(c[i]);
        }
        let coverage = if bins == 1 {
            1.0
        } else {
            hit.iter().filter(|&&h| h).count() as f64 / 10.0
        };
        out.push(BinCoverage {
            lower: a[rows[0]],
            upper: a[rows[rows.len() - 1]],
            count: rows.len(),
            c_min: lo,
            c_max: hi,
            coverage,
            flagged: coverage < threshold,
        });
    }
    Ok(CfOverlapReport {
        c_min: sorted_c[0],
        c_max: sorted_c[n - 1],
        deciles,
        passed: out.iter().all(|b| !b.flagged),
        bins: out,
        threshold,
    })
}
