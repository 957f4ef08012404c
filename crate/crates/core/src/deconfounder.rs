//! The two-step deconfounder: adjust an outcome regression for the
//! substitute confounder, check the factor model, and audit how degenerate
//! the substitute confounder is given the treatments.

use std::collections::{BTreeMap, HashMap, HashSet};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::bootstrap::{bootstrap_draws, BootstrapConfig};
use crate::error::{Error, Result};
use crate::factor_model::{fit_em_counts, substitute_confounder, FitConfig, LatentClassModel, TreatmentModel};
use crate::linalg::least_squares;
use crate::pattern;
pub use crate::report::{Coefficient, Contrast, EstimateReport, Provenance};
use crate::report::{digest_of, linear_contrast};
use crate::rng::{stream_rng, Stream};
use crate::scenarios::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct AteOptions {
    pub bootstrap: BootstrapConfig,
}

/// Regression design `[1, A_1..A_m, Ẑ_1..Ẑ_{k−1}]`, where `Ẑ_z` is the
/// posterior probability of class `z`.
fn deconfounder_design(dataset: &Dataset, model: &LatentClassModel) -> Result<(DMatrix<f64>, Vec<String>)> {
    let sc = substitute_confounder(model, dataset)?;
    let (n, m, k) = (dataset.n(), dataset.m(), model.k());
    let p = 1 + m + k.saturating_sub(1);
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for j in 0..m {
            x[(i, 1 + j)] = dataset.treatment(i, j);
        }
        for z in 1..k {
            x[(i, m + z)] = sc.posteriors[i][z];
        }
    }
    let mut names = vec!["const".to_string()];
    names.extend(dataset.labels().iter().cloned());
    names.extend((1..k).map(|z| format!("Zhat{z}")));
    Ok((x, names))
}

fn select_rows(x: &DMatrix<f64>, y: &[f64], rows: &[usize]) -> (DMatrix<f64>, Vec<f64>) {
    let xs = DMatrix::from_fn(rows.len(), x.ncols(), |r, c| x[(rows[r], c)]);
    (xs, rows.iter().map(|&i| y[i]).collect())
}

fn as_f64(a: &[u8]) -> Vec<f64> {
    a.iter().map(|&v| v as f64).collect()
}

/// Deconfounder estimate of `τ(a, a′) = Σ_j γ_j (a_j − a′_j)`, with `γ` the
/// treatment coefficients of the substitute-confounder-adjusted regression.
///
/// The bootstrap resamples rows and recomputes posteriors and the regression
/// with the factor-model parameters held fixed.
pub fn estimate_ate(
    dataset: &Dataset,
    model: &LatentClassModel,
    a: &[u8],
    a_prime: &[u8],
    options: &AteOptions,
) -> Result<EstimateReport> {
    dataset.require_binary()?;
    let m = dataset.m();
    pattern::check_len(a, m)?;
    pattern::check_len(a_prime, m)?;
    let (x, names) = deconfounder_design(dataset, model)?;
    let y = dataset.outcome();
    let coef = least_squares(&x, y, &names)?;
    let (av, bv) = (as_f64(a), as_f64(a_prime));
    let estimate = linear_contrast(&coef[1..=m], &av, &bv);

    let draws = bootstrap_draws(dataset.n(), coef.len(), &options.bootstrap, |rows| {
        let (xs, ys) = select_rows(&x, y, rows);
        least_squares(&xs, &ys, &names)
    });
    let se = draws.se_of(|c| linear_contrast(&c[1..=m], &av, &bv));
    let coef_se = draws.se(coef.len());

    let mut diagnostics = BTreeMap::new();
    if let Some(fit) = &model.fit {
        diagnostics.insert("factor_model_degenerate".into(), fit.degenerate as u8 as f64);
        diagnostics.insert("factor_model_loglik".into(), fit.loglik);
    }
    Ok(EstimateReport {
        estimand: "ate".into(),
        method: "deconfounder".into(),
        contrast: Contrast::Patterns {
            a: pattern::format(a),
            a_prime: pattern::format(a_prime),
        },
        estimate,
        se,
        replicates: draws.replicates_used(),
        failed_replicates: draws.failures,
        coefficients: names
            .iter()
            .zip(coef.iter().zip(&coef_se))
            .map(|(n, (&e, &s))| Coefficient {
                name: n.clone(),
                estimate: e,
                se: s,
            })
            .collect(),
        diagnostics,
        notes: vec!["bootstrap holds factor-model parameters fixed and recomputes posteriors".into()],
        provenance: Provenance {
            seed: options.bootstrap.seed,
            config_digest: digest_of(options),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseOptions {
    pub alpha: f64,
    /// Parametric-bootstrap datasets for the goodness-of-fit p-value.
    pub gof_replicates: usize,
    pub seed: u64,
    /// EM settings for refitting each bootstrap dataset. The fitted model is
    /// always used as the first start.
    pub refit: FitConfig,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        DiagnoseOptions {
            alpha: 0.05,
            gof_replicates: 199,
            seed: 0,
            refit: FitConfig {
                restarts: 2,
                ..FitConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub class: usize,
    pub j: usize,
    pub j2: usize,
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodnessOfFit {
    /// Likelihood-ratio statistic against the saturated multinomial.
    pub g2: f64,
    /// Saturated minus model parameter count (may be ≤ 0).
    pub df: i64,
    pub p_value: f64,
    pub replicates: usize,
    pub failed_replicates: usize,
    pub cell_counts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub alpha: f64,
    pub class_sizes: Vec<usize>,
    pub pairwise: Vec<PairwiseTest>,
    /// Bonferroni-combined p-value of every test involving each treatment.
    pub per_treatment_p: Vec<f64>,
    pub per_treatment_rejected: Vec<bool>,
    pub goodness_of_fit: GoodnessOfFit,
    /// More than half of the 2×2 cells had expected count below 5.
    pub sparse_cells_warning: bool,
    pub notes: Vec<String>,
}

/// Pearson chi-square test of independence in a 2×2 table
/// `[[n00, n01], [n10, n11]]`. Tables with an empty margin give `p = 1`.
/// Also returns how many of the four expected counts fall below 5.
pub fn chi_square_2x2(table: [[f64; 2]; 2]) -> (f64, f64, usize) {
    let n: f64 = table.iter().flatten().sum();
    let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    let small = (0..2)
        .flat_map(|r| (0..2).map(move |c| (r, c)))
        .filter(|&(r, c)| n == 0.0 || rows[r] * cols[c] / n < 5.0)
        .count();
    if rows.contains(&0.0) || cols.contains(&0.0) {
        return (0.0, 1.0, small);
    }
    let det = table[0][0] * table[1][1] - table[0][1] * table[1][0];
    let stat = n * det * det / (rows[0] * rows[1] * cols[0] * cols[1]);
    let p = ChiSquared::new(1.0).expect("df = 1").sf(stat);
    (stat, p.clamp(0.0, 1.0), small)
}

/// `G² = 2 Σ_cells c ln(c / (n p̂))`.
pub fn g_squared<M: TreatmentModel + ?Sized>(model: &M, counts: &[f64]) -> f64 {
    let n: f64 = counts.iter().sum();
    let g: f64 = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0.0)
        .map(|(code, &c)| {
            let lp = model.log_pattern_prob(&pattern::decode(code, model.m()));
            c * ((c / n).ln() - lp)
        })
        .sum();
    (2.0 * g).max(0.0)
}

/// Multinomial draw of `n` items over cells with the given probabilities.
pub fn sample_multinomial<R: Rng>(rng: &mut R, n: u64, probs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; probs.len()];
    let mut remaining_n = n;
    let mut remaining_p: f64 = probs.iter().sum();
    for (i, &p) in probs.iter().enumerate() {
        if remaining_n == 0 {
            break;
        }
        if i + 1 == probs.len() {
            out[i] = remaining_n as f64;
            break;
        }
        let q = if remaining_p > 0.0 { (p / remaining_p).clamp(0.0, 1.0) } else { 0.0 };
        let draw = Binomial::new(remaining_n, q).expect("q in [0, 1]").sample(rng);
        out[i] = draw as f64;
        remaining_n -= draw;
        remaining_p -= p;
    }
    out
}

/// Check the factor model against the observed treatments.
///
/// (i) Rows are hard-assigned to their most probable class (ties to the
/// lower index) and every treatment pair is tested for independence within
/// each class; p-values are Bonferroni-combined per treatment.
/// (ii) The model's `G²` against the saturated multinomial is referred to
/// a parametric bootstrap: datasets of the same size are drawn from the
/// fitted model and refitted. `p = (1 + #{G²_b ≥ G²}) / (B + 1)`.
///
/// Conditioning on `Ẑ` literally is ill-posed because `Ẑ` is a function of
/// the treatments; (ii) is the operative test.
pub fn diagnose_conditional_independence(
    dataset: &Dataset,
    model: &LatentClassModel,
    options: &DiagnoseOptions,
) -> Result<DiagnosticReport> {
    dataset.require_binary()?;
    let (n, m, k) = (dataset.n(), dataset.m(), model.k());
    if model.m() != m {
        return Err(Error::InvalidData("model and dataset differ in m".into()));
    }
    if !(options.alpha > 0.0 && options.alpha < 1.0) {
        return Err(Error::config("alpha", "must lie in (0, 1)"));
    }

    let sc = substitute_confounder(model, dataset)?;
    let assign: Vec<usize> = sc
        .posteriors
        .iter()
        .map(|p| {
            let mut best = 0;
            for z in 1..p.len() {
                if p[z] > p[best] {
                    best = z;
                }
            }
            best
        })
        .collect();
    let mut class_sizes = vec![0usize; k];
    for &z in &assign {
        class_sizes[z] += 1;
    }

    let mut pairwise = Vec::new();
    let mut small_cells = 0usize;
    let mut total_cells = 0usize;
    for class in 0..k {
        for j in 0..m {
            for j2 in j + 1..m {
                let mut table = [[0.0; 2]; 2];
                for i in (0..n).filter(|&i| assign[i] == class) {
                    let r = dataset.treatment(i, j) as usize;
                    let c = dataset.treatment(i, j2) as usize;
                    table[r][c] += 1.0;
                }
                let (statistic, p_value, small) = chi_square_2x2(table);
                small_cells += small;
                total_cells += 4;
                pairwise.push(PairwiseTest {
                    class,
                    j,
                    j2,
                    n: class_sizes[class],
                    statistic,
                    p_value,
                });
            }
        }
    }
    let per_treatment_p: Vec<f64> = (0..m)
        .map(|t| {
            let involved: Vec<f64> = pairwise
                .iter()
                .filter(|p| p.j == t || p.j2 == t)
                .map(|p| p.p_value)
                .collect();
            if involved.is_empty() {
                return 1.0;
            }
            let min = involved.iter().copied().fold(1.0, f64::min);
            (min * involved.len() as f64).min(1.0)
        })
        .collect();
    let per_treatment_rejected = per_treatment_p.iter().map(|&p| p < options.alpha).collect();

    let goodness_of_fit = goodness_of_fit(dataset, model, options)?;
    let mut notes = vec![
        "pairwise tests condition on the hard-assigned class; the goodness-of-fit test is the operative check"
            .to_string(),
    ];
    if goodness_of_fit.df <= 0 {
        notes.push(format!(
            "model has at least as many parameters as free cells (df = {}); G² carries little information",
            goodness_of_fit.df
        ));
    }
    Ok(DiagnosticReport {
        alpha: options.alpha,
        class_sizes,
        pairwise,
        per_treatment_p,
        per_treatment_rejected,
        goodness_of_fit,
        sparse_cells_warning: total_cells > 0 && 2 * small_cells > total_cells,
        notes,
    })
}

fn goodness_of_fit(
    dataset: &Dataset,
    model: &LatentClassModel,
    options: &DiagnoseOptions,
) -> Result<GoodnessOfFit> {
    let (m, k) = (dataset.m(), model.k());
    let counts = dataset.pattern_counts()?;
    let g2 = g_squared(model, &counts);
    let probs = model.pattern_probs()?;
    let n = dataset.n() as u64;
    let stats: Vec<Option<f64>> = (0..options.gof_replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(options.seed, Stream::ParametricBootstrap, b as u64);
            let boot = sample_multinomial(&mut rng, n, &probs);
            let refit = FitConfig {
                seed: rng.random(),
                ..options.refit
            };
            fit_em_counts(&boot, m, k, &refit, Some(model))
                .ok()
                .map(|fit| g_squared(&fit, &boot))
        })
        .collect();
    let ok: Vec<f64> = stats.iter().flatten().copied().collect();
    let exceed = ok.iter().filter(|&&g| g >= g2).count();
    let p_value = (1 + exceed) as f64 / (1 + ok.len()) as f64;
    let saturated = (1i64 << m) - 1;
    let params = (k * (m + 1)) as i64 - 1;
    Ok(GoodnessOfFit {
        g2,
        df: saturated - params,
        p_value,
        replicates: ok.len(),
        failed_replicates: stats.len() - ok.len(),
        cell_counts: counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternGroup {
    pub pattern: String,
    pub count: usize,
    /// Within-pattern variance of the substitute confounder, summed over
    /// posterior coordinates.
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegeneracyReport {
    pub groups: Vec<PatternGroup>,
    pub max_within_variance: f64,
    pub distinct_patterns: usize,
    pub distinct_values: usize,
    /// `Ẑ` is constant within every pattern and separates every pattern:
    /// `p(Ẑ | A = a)` is a point mass for each observed `a`.
    pub degenerate: bool,
}

/// Audit the substitute confounder's overlap: group rows by treatment
/// pattern and measure how `Ẑ` varies within and across groups.
pub fn check_overlap_degeneracy(dataset: &Dataset, model: &LatentClassModel) -> Result<DegeneracyReport> {
    let sc = substitute_confounder(model, dataset)?;
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..dataset.n() {
        groups.entry(dataset.pattern_code(i)).or_default().push(i);
    }
    let mut out = Vec::with_capacity(groups.len());
    for (&code, rows) in &groups {
        let k = sc.posteriors[rows[0]].len();
        let mut variance = 0.0;
        for z in 0..k {
            // Shift by the first value so identical entries give exactly zero.
            let origin = sc.posteriors[rows[0]][z];
            let d: Vec<f64> = rows.iter().map(|&i| sc.posteriors[i][z] - origin).collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            variance += d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64;
        }
        out.push(PatternGroup {
            pattern: pattern::format(&pattern::decode(code, dataset.m())),
            count: rows.len(),
            variance,
        });
    }
    let distinct_values = sc
        .posteriors
        .iter()
        .map(|p| p.iter().map(|v| v.to_bits()).collect::<Vec<u64>>())
        .collect::<HashSet<_>>()
        .len();
    let max_within_variance = out.iter().map(|g| g.variance).fold(0.0, f64::max);
    let distinct_patterns = out.len();
    Ok(DegeneracyReport {
        groups: out,
        max_within_variance,
        distinct_patterns,
        distinct_values,
        degenerate: max_within_variance == 0.0 && distinct_values == distinct_patterns,
    })
}

/// Distinct posterior vectors over all `2^m` patterns (bitwise).
pub fn distinct_posteriors<M: TreatmentModel + ?Sized>(model: &M) -> Result<usize> {
    let mut seen: HashMap<Vec<u64>, ()> = HashMap::new();
    for a in pattern::enumerate(model.m())? {
        seen.insert(model.posterior(&a).iter().map(|v| v.to_bits()).collect(), ());
    }
    Ok(seen.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_square_reference() {
        // [[10, 20], [30, 40]]: n(ad − bc)² / (r1 r2 c1 c2) = 100·200² / (30·70·40·60)
        let (stat, p, small) = chi_square_2x2([[10.0, 20.0], [30.0, 40.0]]);
        assert!((stat - 100.0 * 40_000.0 / 5_040_000.0).abs() < 1e-12);
        // scipy.stats.chi2.sf(0.79365, 1)
        assert!((p - 0.372_998_5).abs() < 1e-6);
        assert_eq!(small, 0);
        assert_eq!(chi_square_2x2([[5.0, 0.0], [3.0, 0.0]]).1, 1.0);
    }

    #[test]
    fn multinomial_preserves_total() {
        let mut rng = stream_rng(1, Stream::Bootstrap, 0);
        let c = sample_multinomial(&mut rng, 1000, &[0.1, 0.0, 0.6, 0.3]);
        assert_eq!(c.iter().sum::<f64>(), 1000.0);
        assert_eq!(c[1], 0.0);
    }

    #[test]
    fn identical_contrast_is_zero() {
        let ds = crate::scenarios::generate(&crate::scenarios::ScenarioSpec::fig1(3, 3000, 5)).unwrap();
        let model = crate::factor_model::fit_em(&ds, 2, &FitConfig::default()).unwrap();
        let opts = AteOptions {
            bootstrap: BootstrapConfig { replicates: 5, seed: 1 },
        };
        let r = estimate_ate(&ds, &model, &[1, 0, 1], &[1, 0, 1], &opts).unwrap();
        assert_eq!(r.estimate, 0.0);
        let fwd = estimate_ate(&ds, &model, &[1, 1, 0], &[0, 1, 1], &opts).unwrap();
        let back = estimate_ate(&ds, &model, &[0, 1, 1], &[1, 1, 0], &opts).unwrap();
        assert_eq!(fwd.estimate, -back.estimate);
    }

    #[test]
    fn constant_substitute_confounder_is_collinear() {
        let ds = crate::scenarios::generate(&crate::scenarios::ScenarioSpec::fig1(3, 500, 2)).unwrap();
        let flat = LatentClassModel::new(vec![0.4, 0.6], vec![vec![0.3, 0.5, 0.7]; 2]).unwrap();
        let err = estimate_ate(&ds, &flat, &[1, 1, 1], &[0, 0, 0], &AteOptions::default()).unwrap_err();
        match err {
            Error::Identification { involved, .. } => {
                assert!(involved.contains(&"const".to_string()));
                assert!(involved.contains(&"Zhat1".to_string()));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
