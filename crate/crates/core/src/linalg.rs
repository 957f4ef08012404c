//! Least squares with an explicit numerical-rank gate.
//!
//! Designs are column-scaled to unit Euclidean norm before the SVD so the
//! rank verdict does not depend on the units of the regressors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative singular-value tolerance used for every rank decision.
pub const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub columns: Vec<String>,
    /// Singular values of the column-scaled design, descending.
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub full_rank: bool,
    /// Columns carrying weight in the smallest right singular vector when
    /// the design is rank deficient.
    pub collinear: Vec<String>,
}

fn scale_columns(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let mut scaled = x.clone();
    let mut scales = Vec::with_capacity(x.ncols());
    for j in 0..x.ncols() {
        let norm = x.column(j).norm();
        let s = if norm > 0.0 { norm } else { 1.0 };
        scaled.column_mut(j).unscale_mut(s);
        scales.push(s);
    }
    (scaled, scales)
}

/// Rank report for a design matrix (rows = observations).
pub fn rank_report(x: &DMatrix<f64>, columns: &[String]) -> RankReport {
    let (scaled, _) = scale_columns(x);
    let p = x.ncols();
    let svd = scaled.svd(false, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let largest = singular_values.first().copied().unwrap_or(0.0);
    let rank = singular_values
        .iter()
        .filter(|&&s| largest > 0.0 && s > RANK_TOL * largest)
        .count();
    let full_rank = rank == p && x.nrows() >= p;
    let mut collinear = Vec::new();
    if !full_rank && p > 0 {
        if let (Some(v_t), Some(&last)) = (svd.v_t.as_ref(), order.last()) {
            if singular_values.len() == p {
                let v = v_t.row(last);
                let vmax = v.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
                for (j, c) in v.iter().enumerate() {
                    if c.abs() > 0.1 * vmax {
                        collinear.push(columns[j].clone());
                    }
                }
            }
        }
        if collinear.is_empty() {
            collinear = columns.to_vec();
        }
    }
    RankReport {
        columns: columns.to_vec(),
        singular_values,
        rank,
        full_rank,
        collinear,
    }
}

/// Ordinary least squares; fails with an identification error when the
/// design is numerically rank deficient.
pub fn least_squares(x: &DMatrix<f64>, y: &[f64], columns: &[String]) -> Result<Vec<f64>> {
    if x.nrows() != y.len() {
        return Err(Error::InvalidData(format!(
            "design has {} rows but response has {}",
            x.nrows(),
            y.len()
        )));
    }
    let report = rank_report(x, columns);
    if !report.full_rank {
        return Err(Error::identification(
            format!(
                "regression design is rank deficient (rank {} of {})",
                report.rank,
                x.ncols()
            ),
            report.collinear,
        ));
    }
    let (scaled, scales) = scale_columns(x);
    let svd = scaled.svd(true, true);
    let rhs = DVector::from_column_slice(y);
    let beta = svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::InvalidData(e.to_string()))?;
    Ok(beta.iter().zip(&scales).map(|(b, s)| b / s).collect())
}

pub fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}
