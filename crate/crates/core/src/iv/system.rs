//! `E(Y | W = l) = Σ_a q(a) p(A = a | W = l)`: one equation per instrument
//! level, one unknown per treatment pattern.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_draws, BootstrapConfig, BootstrapDraws};
use crate::error::{Error, Result};
use crate::linalg::{least_squares, RANK_TOL};
use crate::pattern;
use crate::report::{digest_of, Coefficient, Contrast, EstimateReport, Provenance};
use crate::scenarios::Dataset;

/// Largest number of binary treatments for which the `2^m` system is built.
pub const MAX_IV_TREATMENTS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvSystem {
    pub m: usize,
    pub levels: usize,
    /// `E(Y | W = l)`.
    pub response: Vec<f64>,
    /// `matrix[a][l] = p(A = a | W = l)`, patterns indexed by code.
    pub matrix: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
}

impl IvSystem {
    pub fn patterns(&self) -> usize {
        1 << self.m
    }

    /// The `L × 2^m` coefficient matrix of the linear system.
    pub fn design(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.levels, self.patterns(), |l, a| self.matrix[a][l])
    }

    /// `Σ_a q(a) P[a, l]` for every level.
    pub fn implied_response(&self, q: &[f64]) -> Vec<f64> {
        (0..self.levels)
            .map(|l| (0..self.patterns()).map(|a| q[a] * self.matrix[a][l]).sum())
            .collect()
    }
}

/// Tabulate `E(Y | W)` and `p(A | W)` from a dataset with an instrument.
pub fn build_iv_system(dataset: &Dataset) -> Result<IvSystem> {
    dataset.require_binary()?;
    let m = dataset.m();
    if m > MAX_IV_TREATMENTS {
        return Err(Error::config(
            "m",
            format!("the IV system is limited to {MAX_IV_TREATMENTS} treatments, got {m}"),
        ));
    }
    let inst = dataset
        .instrument()
        .ok_or_else(|| Error::InvalidData("dataset has no instrument column W".into()))?;
    let levels = inst.levels;
    let mut counts = vec![0usize; levels];
    let mut sums = vec![0.0; levels];
    let mut cells = vec![vec![0usize; levels]; 1 << m];
    for (i, &w) in inst.values.iter().enumerate() {
        counts[w] += 1;
        sums[w] += dataset.outcome()[i];
        cells[dataset.pattern_code(i)][w] += 1;
    }
    if let Some(l) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidData(format!(
            "instrument level {l} has no rows (declared levels: {levels})"
        )));
    }
    let response = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let matrix = cells
        .iter()
        .map(|row| row.iter().zip(&counts).map(|(&k, &c)| k as f64 / c as f64).collect())
        .collect();
    Ok(IvSystem {
        m,
        levels,
        response,
        matrix,
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IvVerdict {
    FullRank,
    /// `p(A | W)` does not vary with `W`.
    Irrelevant,
    /// Fewer levels than patterns.
    Underdetermined,
    RankDeficient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvRankReport {
    pub levels: usize,
    pub patterns: usize,
    /// Singular values of the `L × 2^m` system matrix, descending.
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub verdict: IvVerdict,
    pub notes: Vec<String>,
}

impl IvRankReport {
    pub fn identified(&self) -> bool {
        self.verdict == IvVerdict::FullRank
    }
}

pub fn rank_check(system: &IvSystem) -> IvRankReport {
    let mut sv: Vec<f64> = system.design().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let largest = sv.first().copied().unwrap_or(0.0);
    let rank = sv.iter().filter(|&&s| largest > 0.0 && s > RANK_TOL * largest).count();
    let (levels, patterns) = (system.levels, system.patterns());
    let mut notes = Vec::new();
    let verdict = if rank == 1 && levels >= 2 {
        notes.push("p(A | W) is the same at every instrument level; the instrument is irrelevant".into());
        IvVerdict::Irrelevant
    } else if levels < patterns {
        notes.push(format!(
            "identification requires the instrument to have at least 2^m = {patterns} levels, got {levels}"
        ));
        IvVerdict::Underdetermined
    } else if rank < patterns {
        notes.push(format!("system matrix has rank {rank} < {patterns}"));
        IvVerdict::RankDeficient
    } else {
        IvVerdict::FullRank
    };
    if levels == patterns && verdict == IvVerdict::FullRank {
        notes.push("exactly identified: the system is solved exactly".into());
    }
    IvRankReport {
        levels,
        patterns,
        singular_values: sv,
        rank,
        verdict,
        notes,
    }
}

/// Solve for `q` by least squares with level `l` weighted by its row count;
/// exact when `L = 2^m`.
pub fn solve_q(system: &IvSystem) -> Result<Vec<f64>> {
    let report = rank_check(system);
    if !report.identified() {
        return Err(Error::identification(
            format!(
                "q is not identified ({:?}): {}",
                report.verdict,
                report.notes.join("; ")
            ),
            vec!["W".into()],
        ));
    }
    let x = system.design();
    let w: Vec<f64> = system.counts.iter().map(|&c| (c as f64).sqrt()).collect();
    let xw = DMatrix::from_fn(x.nrows(), x.ncols(), |l, a| w[l] * x[(l, a)]);
    let yw: Vec<f64> = system.response.iter().zip(&w).map(|(y, w)| y * w).collect();
    let names = pattern_names(system.m);
    least_squares(&xw, &yw, &names)
}

fn pattern_names(m: usize) -> Vec<String> {
    (0..1usize << m)
        .map(|c| format!("q({})", pattern::format(&pattern::decode(c, m))))
        .collect()
}

/// `q̂` with bootstrap standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct IvFit {
    pub system: IvSystem,
    pub rank: IvRankReport,
    pub q: Vec<f64>,
    pub se: Vec<f64>,
    pub draws: BootstrapDraws,
    pub seed: u64,
    pub config_digest: String,
}

impl IvFit {
    pub fn q_of(&self, a: &[u8]) -> Result<f64> {
        pattern::check_len(a, self.system.m)?;
        Ok(self.q[pattern::encode(a)])
    }

    /// Report `q(a) − q(a′)`, or `q(a)` alone when `a_prime` is `None`.
    pub fn report(&self, a: &[u8], a_prime: Option<&[u8]>) -> Result<EstimateReport> {
        let m = self.system.m;
        pattern::check_len(a, m)?;
        let ia = pattern::encode(a);
        let ib = match a_prime {
            Some(b) => {
                pattern::check_len(b, m)?;
                Some(pattern::encode(b))
            }
            None => None,
        };
        let value = |q: &[f64]| q[ia] - ib.map_or(0.0, |i| q[i]);
        let contrast = match a_prime {
            Some(b) => Contrast::Patterns {
                a: pattern::format(a),
                a_prime: pattern::format(b),
            },
            None => Contrast::Level { a: pattern::format(a) },
        };
        Ok(EstimateReport {
            estimand: if a_prime.is_some() { "ate" } else { "mean_potential_outcome" }.into(),
            method: "iv".into(),
            contrast,
            estimate: value(&self.q),
            se: self.draws.se_of(value),
            replicates: self.draws.replicates_used(),
            failed_replicates: self.draws.failures,
            coefficients: pattern_names(m)
                .into_iter()
                .zip(self.q.iter().zip(&self.se))
                .map(|(name, (&e, &s))| Coefficient { name, estimate: e, se: s })
                .collect(),
            diagnostics: [
                ("rank".to_string(), self.rank.rank as f64),
                ("levels".to_string(), self.rank.levels as f64),
            ]
            .into_iter()
            .collect(),
            notes: self.rank.notes.clone(),
            provenance: Provenance {
                seed: self.seed,
                config_digest: self.config_digest.clone(),
            },
        })
    }
}

/// Build, check and solve the system, bootstrapping rows for standard
/// errors. Resamples that lose an instrument level count as failures.
pub fn estimate_q(dataset: &Dataset, bootstrap: &BootstrapConfig) -> Result<IvFit> {
    let system = build_iv_system(dataset)?;
    let rank = rank_check(&system);
    let q = solve_q(&system)?;
    let draws = bootstrap_draws(dataset.n(), q.len(), bootstrap, |rows| {
        solve_q(&build_iv_system(&dataset.subset(rows))?)
    });
    let se = draws.se(q.len());
    Ok(IvFit {
        system,
        rank,
        q,
        se,
        draws,
        seed: bootstrap.seed,
        config_digest: digest_of(bootstrap),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> Dataset {
        // W = 0: A = (0,0,0,1), Y mean 1; W = 1: A = (0,1,1,1), Y mean 2.
        let a: Vec<Vec<u8>> = [0, 0, 0, 1, 0, 1, 1, 1].iter().map(|&v| vec![v]).collect();
        let y = vec![1.0, 0.5, 1.5, 1.0, 2.0, 1.5, 2.5, 2.0];
        Dataset::binary(&a, y)
            .unwrap()
            .with_instrument(vec![0, 0, 0, 0, 1, 1, 1, 1], 2)
            .unwrap()
    }

    #[test]
    fn hand_solved_system() {
        let sys = build_iv_system(&two_by_two()).unwrap();
        assert_eq!(sys.matrix, vec![vec![0.75, 0.25], vec![0.25, 0.75]]);
        assert_eq!(sys.response, vec![1.0, 2.0]);
        let r = rank_check(&sys);
        assert_eq!(r.verdict, IvVerdict::FullRank);
        assert!((r.singular_values[0] - 1.0).abs() < 1e-12);
        assert!((r.singular_values[1] - 0.5).abs() < 1e-12);
        let q = solve_q(&sys).unwrap();
        assert!((q[0] - 0.5).abs() < 1e-12 && (q[1] - 2.5).abs() < 1e-12, "{q:?}");
    }

    #[test]
    fn missing_level_is_named() {
        let ds = Dataset::binary(&[vec![0], vec![1]], vec![0.0, 1.0])
            .unwrap()
            .with_instrument(vec![0, 1], 3)
            .unwrap();
        let err = build_iv_system(&ds).unwrap_err().to_string();
        assert!(err.contains("level 2"), "{err}");
    }
}
