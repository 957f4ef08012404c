use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pattern;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreatmentKind {
    Binary,
    Continuous,
}

/// Discrete instrument with values in `[0, levels)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Instrument {
    pub values: Vec<usize>,
    pub levels: usize,
}

/// `n` observations of `m` treatments, an outcome, and optionally an
/// instrument and the latent confounder used to generate the data.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    kind: TreatmentKind,
    labels: Vec<String>,
    /// Row-major `n × m`.
    treatments: Vec<f64>,
    outcome: Vec<f64>,
    instrument: Option<Instrument>,
    latent: Option<Vec<f64>>,
}

impl Dataset {
    /// Build a dataset from row-major treatments, checking every invariant.
    pub fn new(
        kind: TreatmentKind,
        m: usize,
        treatments: Vec<f64>,
        outcome: Vec<f64>,
    ) -> Result<Self> {
        let n = outcome.len();
        if n == 0 {
            return Err(Error::InvalidData("dataset must have at least one row".into()));
        }
        if m == 0 {
            return Err(Error::InvalidData("dataset must have at least one treatment".into()));
        }
        if treatments.len() != n * m {
            return Err(Error::InvalidData(format!(
                "treatment matrix has {} cells, expected {n}×{m}",
                treatments.len()
            )));
        }
        if kind == TreatmentKind::Binary {
            if let Some(pos) = treatments.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidData(format!(
                    "row {}: treatment A{} = {} is not binary",
                    pos / m,
                    pos % m + 1,
                    treatments[pos]
                )));
            }
        }
        Ok(Dataset {
            kind,
            labels: (1..=m).map(|j| format!("A{j}")).collect(),
            treatments,
            outcome,
            instrument: None,
            latent: None,
        })
    }

    pub fn binary(patterns: &[Vec<u8>], outcome: Vec<f64>) -> Result<Self> {
        let m = patterns.first().map(|p| p.len()).unwrap_or(0);
        if patterns.iter().any(|p| p.len() != m) {
            return Err(Error::InvalidData("ragged treatment patterns".into()));
        }
        if patterns.len() != outcome.len() {
            return Err(Error::InvalidData("pattern and outcome counts differ".into()));
        }
        let flat = patterns.iter().flatten().map(|&a| a as f64).collect();
        Dataset::new(TreatmentKind::Binary, m, flat, outcome)
    }

    pub fn with_instrument(mut self, values: Vec<usize>, levels: usize) -> Result<Self> {
        if values.len() != self.n() {
            return Err(Error::InvalidData("instrument length differs from n".into()));
        }
        if let Some(i) = values.iter().position(|&w| w >= levels) {
            return Err(Error::InvalidData(format!(
                "row {i}: instrument value {} outside [0, {levels})",
                values[i]
            )));
        }
        self.instrument = Some(Instrument { values, levels });
        Ok(self)
    }

    pub fn with_latent(mut self, latent: Vec<f64>) -> Result<Self> {
        if latent.len() != self.n() {
            return Err(Error::InvalidData("latent length differs from n".into()));
        }
        self.latent = Some(latent);
        Ok(self)
    }

    pub fn with_outcome(mut self, outcome: Vec<f64>) -> Result<Self> {
        if outcome.len() != self.n() {
            return Err(Error::InvalidData("outcome length differs from n".into()));
        }
        self.outcome = outcome;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn m(&self) -> usize {
        self.labels.len()
    }

    pub fn kind(&self) -> TreatmentKind {
        self.kind
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.m();
        &self.treatments[i * m..(i + 1) * m]
    }

    pub fn treatment(&self, i: usize, j: usize) -> f64 {
        self.treatments[i * self.m() + j]
    }

    /// Column `j` of the treatment matrix.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.treatment(i, j)).collect()
    }

    pub fn pattern(&self, i: usize) -> Vec<u8> {
        self.row(i).iter().map(|&v| v as u8).collect()
    }

    pub fn pattern_code(&self, i: usize) -> usize {
        self.row(i)
            .iter()
            .enumerate()
            .fold(0usize, |acc, (j, &v)| acc | ((v as usize) << j))
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn instrument(&self) -> Option<&Instrument> {
        self.instrument.as_ref()
    }

    pub fn latent(&self) -> Option<&[f64]> {
        self.latent.as_deref()
    }

    pub fn require_binary(&self) -> Result<()> {
        if self.kind != TreatmentKind::Binary {
            return Err(Error::InvalidData("binary treatments required".into()));
        }
        Ok(())
    }

    /// Rows at the given indices (with repetition), e.g. a bootstrap draw.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let m = self.m();
        let mut treatments = Vec::with_capacity(rows.len() * m);
        for &i in rows {
            treatments.extend_from_slice(self.row(i));
        }
        Dataset {
            kind: self.kind,
            labels: self.labels.clone(),
            treatments,
            outcome: rows.iter().map(|&i| self.outcome[i]).collect(),
            instrument: self.instrument.as_ref().map(|w| Instrument {
                values: rows.iter().map(|&i| w.values[i]).collect(),
                levels: w.levels,
            }),
            latent: self
                .latent
                .as_ref()
                .map(|z| rows.iter().map(|&i| z[i]).collect()),
        }
    }

    /// Counts of each binary pattern, indexed by pattern code.
    pub fn pattern_counts(&self) -> Result<Vec<f64>> {
        self.require_binary()?;
        pattern::guard(self.m())?;
        let mut counts = vec![0.0; 1 << self.m()];
        for i in 0..self.n() {
            counts[self.pattern_code(i)] += 1.0;
        }
        Ok(counts)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let mut header: Vec<&str> = self.labels.iter().map(String::as_str).collect();
        header.push("Y");
        if self.instrument.is_some() {
            header.push("W");
        }
        if self.latent.is_some() {
            header.push("Z");
        }
        out.push_str(&header.join(","));
        out.push('\n');
        for i in 0..self.n() {
            for (j, v) in self.row(i).iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                write!(out, "{v}").unwrap();
            }
            write!(out, ",{}", self.outcome[i]).unwrap();
            if let Some(w) = &self.instrument {
                write!(out, ",{}", w.values[i]).unwrap();
            }
            if let Some(z) = &self.latent {
                write!(out, ",{}", z[i]).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Parse the CSV layout `A1,...,Am,Y[,W][,Z]`.
    pub fn from_csv_str(text: &str, kind: TreatmentKind) -> Result<Self> {
        let mut lines = text.split('\n').enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty file".into(),
        })?;
        let header: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
        let y_pos = header.iter().position(|&h| h == "Y").ok_or(Error::Parse {
            line: 1,
            message: "header has no Y column".into(),
        })?;
        if y_pos == 0 {
            return Err(Error::Parse {
                line: 1,
                message: "header has no treatment columns before Y".into(),
            });
        }
        let tail = &header[y_pos + 1..];
        let (has_w, has_z) = match tail {
            [] => (false, false),
            ["W"] => (true, false),
            ["Z"] => (false, true),
            ["W", "Z"] => (true, true),
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("unexpected trailing columns {tail:?}; expected [W][,Z]"),
                })
            }
        };
        let labels: Vec<String> = header[..y_pos].iter().map(|s| s.to_string()).collect();
        if let Some(dup) = header.iter().find(|h| h.is_empty()) {
            return Err(Error::Parse {
                line: 1,
                message: format!("empty column name {dup:?}"),
            });
        }
        let m = y_pos;
        let width = header.len();

        let mut treatments = Vec::new();
        let mut outcome = Vec::new();
        let mut w_values = Vec::new();
        let mut latent = Vec::new();
        for (idx, raw) in lines {
            let line_no = idx + 1;
            let raw = raw.trim_end_matches('\r');
            if raw.is_empty() {
                continue;
            }
            let cells: Vec<&str> = raw.split(',').collect();
            if cells.len() != width {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {width} fields, found {}", cells.len()),
                });
            }
            let num = |c: usize| -> Result<f64> {
                cells[c].trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("column {}: non-numeric value {:?}", header[c], cells[c]),
                })
            };
            for j in 0..m {
                let v = num(j)?;
                if kind == TreatmentKind::Binary && v != 0.0 && v != 1.0 {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("row {}: treatment {} = {v} is not binary", outcome.len(), header[j]),
                    });
                }
                treatments.push(v);
            }
            outcome.push(num(m)?);
            let mut c = m + 1;
            if has_w {
                let w = cells[c].trim().parse::<usize>().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("instrument value {:?} is not a nonnegative integer", cells[c]),
                })?;
                w_values.push(w);
                c += 1;
            }
            if has_z {
                latent.push(num(c)?);
            }
        }
        if outcome.is_empty() {
            return Err(Error::Parse {
                line: 2,
                message: "no data rows".into(),
            });
        }
        let mut ds = Dataset::new(kind, m, treatments, outcome)?;
        ds.labels = labels;
        if has_w {
            let levels = w_values.iter().max().map_or(1, |&w| w + 1);
            ds = ds.with_instrument(w_values, levels)?;
        }
        if has_z {
            ds = ds.with_latent(latent)?;
        }
        Ok(ds)
    }
}

/// Write a dataset as CSV.
pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, dataset.to_csv_string())?;
    Ok(())
}

/// Read a binary-treatment dataset.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    load_csv_as(path, TreatmentKind::Binary)
}

pub fn load_csv_as(path: impl AsRef<Path>, kind: TreatmentKind) -> Result<Dataset> {
    Dataset::from_csv_str(&fs::read_to_string(path)?, kind)
}
