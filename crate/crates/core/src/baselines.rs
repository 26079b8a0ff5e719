// SPDX-License-Identifier: Apache-2.0

//! Central-model reference mechanisms and exact oracles.
//!
//! These run on the raw data with no messaging at all. They serve two
//! roles: exact oracles (`clipped_sum_oracle`, `max_k`) that tests compare
//! protocol outputs against, and noisy central-model estimators that the
//! benchmarks report as gold-standard error levels. The clipping reference
//! deliberately uses a non-private threshold — the point is the error level
//! an ideal threshold would allow, reported honestly as an idealization.

use crate::error::{Error, Result};
use rand::Rng;

/// A scalar dataset: integer values in [0, domain].
#[derive(Clone, Debug)]
pub struct ScalarDataset {
    values: Vec<u64>,
    domain: u64,
}

impl ScalarDataset {
    pub fn new(values: Vec<u64>, domain: u64) -> Result<Self> {
        if domain == 0 {
            return Err(Error::invalid("domain bound U must be at least 1"));
        }
        if values.is_empty() {
            return Err(Error::dataset("dataset must contain at least one user"));
        }
        if let Some(&bad) = values.iter().find(|&&v| v > domain) {
            return Err(Error::dataset(format!("value {bad} outside [0, {domain}]")));
        }
        Ok(ScalarDataset { values, domain })
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn domain(&self) -> u64 {
        self.domain
    }

    pub fn n(&self) -> u64 {
        self.values.len() as u64
    }

    pub fn sum(&self) -> u128 {
        self.values.iter().map(|&v| v as u128).sum()
    }

    pub fn max(&self) -> u64 {
        self.values.iter().copied().max().unwrap_or(0)
    }
}

/// Standard Laplace draw (location 0, scale 1) via inverse CDF.
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen_range(-0.5..0.5);
    -u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Central-model Laplace sum: Sum(D) + (U/epsilon) * Lap(1). The scale is
/// the worst-case per-user contribution, so the error never adapts to the
/// data.
pub fn central_laplace<R: Rng + ?Sized>(
    dataset: &ScalarDataset,
    epsilon: f64,
    noiseless: bool,
    rng: &mut R,
) -> f64 {
    let sum = dataset.sum() as f64;
    if noiseless {
        return sum;
    }
    sum + dataset.domain() as f64 / epsilon * sample_laplace(rng)
}

/// Exact clipped sum: sum of min(x, tau).
pub fn clipped_sum_oracle(values: &[u64], tau: u64) -> u128 {
    values.iter().map(|&v| v.min(tau) as u128).sum()
}

/// The k-th largest value in the data.
pub fn max_k(values: &[u64], k: usize) -> Result<u64> {
    if k == 0 || k > values.len() {
        return Err(Error::invalid(format!(
            "rank k={k} outside 1..={}",
            values.len()
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    Ok(sorted[k - 1])
}

/// Idealized central-model clipping reference: clip at the next power of
/// two above the true maximum, then add (tau/epsilon) * Lap(1). The
/// threshold choice is non-private; this estimator exists only as a
/// best-case error comparator. Beta is accepted for signature uniformity
/// with the private estimators but does not affect the idealized rule.
pub fn central_clipping_reference<R: Rng + ?Sized>(
    dataset: &ScalarDataset,
    epsilon: f64,
    _beta: f64,
    noiseless: bool,
    rng: &mut R,
) -> f64 {
    let tau = dataset.max().next_power_of_two() * (dataset.max() > 0) as u64;
    let clipped = clipped_sum_oracle(dataset.values(), tau) as f64;
    if noiseless {
        return clipped;
    }
    clipped + tau as f64 / epsilon * sample_laplace(rng)
}
