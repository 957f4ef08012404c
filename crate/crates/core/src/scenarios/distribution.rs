use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern;

const SUM_TOL: f64 = 1e-12;

/// A distribution over binary treatment patterns, used as an intervention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", content = "probs", rename_all = "snake_case")]
pub enum TreatmentDistribution {
    /// Probability of every pattern, indexed by pattern code.
    Table(Vec<f64>),
    /// Independent Bernoulli marginals `P(A_j = 1)`.
    Product(Vec<f64>),
}

impl TreatmentDistribution {
    pub fn table(probs: Vec<f64>) -> Result<Self> {
        let d = TreatmentDistribution::Table(probs);
        d.validate()?;
        Ok(d)
    }

    pub fn product(marginals: Vec<f64>) -> Result<Self> {
        let d = TreatmentDistribution::Product(marginals);
        d.validate()?;
        Ok(d)
    }

    pub fn point_mass(at: &[u8]) -> Result<Self> {
        pattern::guard(at.len())?;
        let mut probs = vec![0.0; 1 << at.len()];
        probs[pattern::encode(at)] = 1.0;
        TreatmentDistribution::table(probs)
    }

    pub fn m(&self) -> usize {
        match self {
            TreatmentDistribution::Table(p) => p.len().trailing_zeros() as usize,
            TreatmentDistribution::Product(q) => q.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TreatmentDistribution::Table(p) => {
                if p.is_empty() || !p.len().is_power_of_two() {
                    return Err(Error::config(
                        "distribution",
                        format!("table has {} entries; expected 2^m", p.len()),
                    ));
                }
                if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                    return Err(Error::config("distribution", "negative or non-finite probability"));
                }
                let total: f64 = p.iter().sum();
                if (total - 1.0).abs() > SUM_TOL {
                    return Err(Error::config(
                        "distribution",
                        format!("probabilities sum to {total}, not 1"),
                    ));
                }
            }
            TreatmentDistribution::Product(q) => {
                if q.is_empty() {
                    return Err(Error::config("distribution", "no marginals"));
                }
                if q.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                    return Err(Error::config("distribution", "marginal outside [0, 1]"));
                }
            }
        }
        Ok(())
    }

    pub fn prob(&self, a: &[u8]) -> f64 {
        match self {
            TreatmentDistribution::Table(p) => p[pattern::encode(a)],
            TreatmentDistribution::Product(q) => q
                .iter()
                .zip(a)
                .map(|(&p, &aj)| if aj == 1 { p } else { 1.0 - p })
                .product(),
        }
    }

    /// `P(A_j = 1)` for each treatment.
    pub fn marginals(&self) -> Result<Vec<f64>> {
        match self {
            TreatmentDistribution::Product(q) => Ok(q.clone()),
            TreatmentDistribution::Table(p) => {
                let m = self.m();
                let mut out = vec![0.0; m];
                for (code, &pa) in p.iter().enumerate() {
                    for (j, o) in out.iter_mut().enumerate() {
                        if (code >> j) & 1 == 1 {
                            *o += pa;
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            TreatmentDistribution::Table(p) => p.iter().sum(),
            TreatmentDistribution::Product(_) => 1.0,
        }
    }

    /// The pattern carrying all the mass, if the distribution is degenerate.
    pub fn point_mass_at(&self) -> Option<Vec<u8>> {
        match self {
            TreatmentDistribution::Table(p) => {
                let support: Vec<usize> = (0..p.len()).filter(|&c| p[c] > 0.0).collect();
                (support.len() == 1).then(|| pattern::decode(support[0], self.m()))
            }
            TreatmentDistribution::Product(q) => q
                .iter()
                .all(|&v| v == 0.0 || v == 1.0)
                .then(|| q.iter().map(|&v| v as u8).collect()),
        }
    }

    /// Parse `prod:<p1,...,pm>` or `table:<file.csv>`.
    pub fn parse_literal(text: &str) -> Result<Self> {
        if let Some(rest) = text.strip_prefix("prod:") {
            let q = rest
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::config("distribution", format!("bad probability {s:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            TreatmentDistribution::product(q)
        } else if let Some(path) = text.strip_prefix("table:") {
            load_table_csv(path)
        } else {
            Err(Error::config(
                "distribution",
                format!("expected prod:<...> or table:<file>, got {text:?}"),
            ))
        }
    }
}

/// Read a table distribution from CSV with header `A1,...,Am,p`.
pub fn load_table_csv(path: impl AsRef<Path>) -> Result<TreatmentDistribution> {
    parse_table_csv(&fs::read_to_string(path)?)
}

pub fn parse_table_csv(text: &str) -> Result<TreatmentDistribution> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty table".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.last() != Some(&"p") || cols.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            message: "table header must be A1,...,Am,p".into(),
        });
    }
    let m = cols.len() - 1;
    pattern::guard(m)?;
    let mut probs = vec![0.0; 1 << m];
    let mut seen = vec![false; 1 << m];
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let bad = |message: String| Error::Parse {
            line: idx + 1,
            message,
        };
        if cells.len() != m + 1 {
            return Err(bad(format!("expected {} fields, found {}", m + 1, cells.len())));
        }
        let a = cells[..m]
            .iter()
            .map(|c| match c.trim() {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(bad(format!("pattern entry {other:?} is not 0/1"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        let p = cells[m]
            .trim()
            .parse::<f64>()
            .map_err(|_| bad(format!("bad probability {:?}", cells[m])))?;
        let code = pattern::encode(&a);
        if seen[code] {
            return Err(bad(format!("duplicate pattern {}", pattern::format(&a))));
        }
        seen[code] = true;
        probs[code] = p;
    }
    TreatmentDistribution::table(probs)
}
