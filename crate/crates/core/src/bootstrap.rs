//! Nonparametric row bootstrap.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 200,
            seed: 0,
        }
    }
}

/// Successful replicate statistics, in replicate-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDraws {
    pub draws: Vec<Vec<f64>>,
    pub failures: usize,
}

impl BootstrapDraws {
    pub fn replicates_used(&self) -> usize {
        self.draws.len()
    }

    /// Per-component standard deviation across draws.
    pub fn se(&self, dim: usize) -> Vec<f64> {
        (0..dim)
            .map(|c| sample_sd(&self.draws.iter().map(|v| v[c]).collect::<Vec<_>>()))
            .collect()
    }

    /// Standard deviation of a scalar function of each draw.
    pub fn se_of<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        sample_sd(&self.draws.iter().map(|v| f(v)).collect::<Vec<_>>())
    }
}

/// Draw `n` row indices with replacement.
pub fn resample<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Bootstrap a vector-valued statistic of the resampled row indices.
///
/// Replicate `b` resamples with the stream derived from `(config.seed, b)`;
/// replicates run in parallel and are collected in index order, so the
/// result does not depend on the thread count. Replicates whose statistic
/// errors are counted as failures and dropped.
pub fn bootstrap_draws<F>(n: usize, dim: usize, config: &BootstrapConfig, stat: F) -> BootstrapDraws
where
    F: Fn(&[usize]) -> Result<Vec<f64>> + Sync,
{
    let raw: Vec<Option<Vec<f64>>> = (0..config.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(config.seed, Stream::Bootstrap, b as u64);
            let idx = resample(n, &mut rng);
            stat(&idx).ok().filter(|v| v.len() == dim)
        })
        .collect();
    let failures = raw.iter().filter(|d| d.is_none()).count();
    BootstrapDraws {
        draws: raw.into_iter().flatten().collect(),
        failures,
    }
}

/// Sample standard deviation with the `n - 1` divisor; 0 for fewer than two values.
pub fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn se_of_mean_matches_analytic() {
        let data: Vec<f64> = (0..400).map(|i| (i % 7) as f64).collect();
        let cfg = BootstrapConfig {
            replicates: 400,
            seed: 9,
        };
        let res = bootstrap_draws(data.len(), 1, &cfg, |idx| {
            Ok(vec![idx.iter().map(|&i| data[i]).sum::<f64>() / idx.len() as f64])
        });
        let analytic = sample_sd(&data) / (data.len() as f64).sqrt();
        assert!((res.se(1)[0] - analytic).abs() < 0.15 * analytic);
        assert_eq!(res.replicates_used(), 400);
    }

    #[test]
    fn zero_replicates() {
        let res = bootstrap_draws(10, 2, &BootstrapConfig { replicates: 0, seed: 1 }, |_| {
            Ok(vec![0.0, 0.0])
        });
        assert_eq!(res.se(2), vec![0.0, 0.0]);
        assert_eq!(res.replicates_used(), 0);
    }
}
