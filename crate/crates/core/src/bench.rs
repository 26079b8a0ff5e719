// SPDX-License-Identifier: Apache-2.0

//! Benchmark harness: synthetic data generation, CSV ingestion, seeded
//! multi-trial experiment runs, trimmed-mean error reporting, parameter
//! sweeps, and machine-readable JSON/CSV emission.
//!
//! Reporting convention: each trial records one headline error — absolute
//! error for scalar protocols, L2 for the rotation protocol, L-infinity for
//! the sparse ones. An experiment drops the `trim` largest and smallest
//! trial errors and averages the rest; `re_percent` divides that trimmed
//! mean by the matching norm of the true answer. Identical config and
//! master seed reproduce byte-identical CSV output (JSON additionally
//! carries wall times, which vary run to run).

use crate::base_sum::{self, BaseParams, DEFAULT_LAMBDA};
use crate::baselines::{self, ScalarDataset};
use crate::budget::PrivacyBudget;
use crate::error::{Error, Result};
use crate::high_dim::{self, HighDimParams};
use crate::rng::StreamSeed;
use crate::shuffle::Traffic;
use crate::sparse_vec::{self, SparseParams};
use crate::sum_dp::{self, SumParams};
use rand::Rng;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

/// Which estimator an experiment runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Bounded sum over the full domain, no threshold selection.
    Base,
    /// Scalar sum with private clipping-threshold selection.
    Sum,
    /// Vector sum via randomized rotation.
    HighDim,
    /// Sparse binary vector aggregation with sparsity buckets.
    Sparse,
    /// Central-model Laplace sum (no messaging).
    CentralLaplace,
    /// Central-model idealized clipped sum (no messaging).
    CentralClip,
    /// Per-dimension binary counting without sparsity buckets.
    NaiveVec,
}

/// Input shape a protocol consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataShape {
    Scalar,
    Vectors,
    Binary,
}

/// Headline error metric a protocol reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorMetric {
    Absolute,
    L2,
    LInf,
}

impl Protocol {
    pub fn shape(&self) -> DataShape {
        match self {
            Protocol::Base | Protocol::Sum | Protocol::CentralLaplace | Protocol::CentralClip => {
                DataShape::Scalar
            }
            Protocol::HighDim => DataShape::Vectors,
            Protocol::Sparse | Protocol::NaiveVec => DataShape::Binary,
        }
    }

    pub fn metric(&self) -> ErrorMetric {
        match self.shape() {
            DataShape::Scalar => ErrorMetric::Absolute,
            DataShape::Vectors => ErrorMetric::L2,
            DataShape::Binary => ErrorMetric::LInf,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Base => "base",
            Protocol::Sum => "sum",
            Protocol::HighDim => "highdim",
            Protocol::Sparse => "sparse",
            Protocol::CentralLaplace => "central_laplace",
            Protocol::CentralClip => "central_clip",
            Protocol::NaiveVec => "naive_vec",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Protocol::Base),
            "sum" => Ok(Protocol::Sum),
            "highdim" => Ok(Protocol::HighDim),
            "sparse" => Ok(Protocol::Sparse),
            "central_laplace" => Ok(Protocol::CentralLaplace),
            "central_clip" => Ok(Protocol::CentralClip),
            "naive_vec" => Ok(Protocol::NaiveVec),
            other => Err(Error::invalid(format!(
                "unknown protocol {other:?}; expected base, sum, highdim, sparse, central_laplace, central_clip, or naive_vec"
            ))),
        }
    }
}

/// Synthetic data family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// pmf proportional to (x + a)^(-b) over {1, ..., U}.
    Zipf { a: f64, b: f64 },
    /// Normal draws rounded to integers and clamped to [0, U].
    Gauss { mu: f64, sigma: f64 },
    /// Binary vectors: L1 norm uniform in {1, ..., max_ones}, positions
    /// drawn with popularity proportional to (k+1)^(-skew) (0 = uniform).
    BinarySparse { max_ones: u32, skew: f64 },
    /// Every user holds the same value.
    Constant { value: u64 },
}

/// Where an experiment's data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSpec {
    Generate {
        kind: GeneratorKind,
        n: u64,
        /// Scalar value domain bound U.
        domain: u64,
        /// Vector dimension, for vector and binary protocols.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dim: Option<u32>,
        /// L2 norm bound, for the rotation protocol.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        l2_bound: Option<u64>,
    },
    File {
        path: String,
        /// Header name of the value column; omitted means a headerless
        /// single-column file.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        column: Option<String>,
        /// Clamp bound; omitted means the observed maximum.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        domain: Option<u64>,
    },
}

/// Materialized input data.
#[derive(Clone, Debug)]
pub enum Dataset {
    Scalar(ScalarDataset),
    Vectors { rows: Vec<Vec<u64>>, dim: u32, l2_bound: u64 },
    Binary { rows: Vec<Vec<u32>>, dim: u32 },
}

/// What was actually materialized, echoed into reports.
#[derive(Clone, Debug, Serialize)]
pub struct DatasetSummary {
    pub n: u64,
    pub shape: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<u32>,
    /// Largest scalar value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_value: Option<u64>,
    /// Largest vector L2 norm.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_l2: Option<f64>,
    /// Largest binary-vector L1 norm.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_l1: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_sum: Option<f64>,
    pub skipped_rows: u32,
    pub clamped_values: u32,
}

/// Inverse-CDF sampler for pmf proportional to (x + a)^(-b) over
/// {1, ..., domain}. Memory is O(domain).
struct ShiftedZipf {
    cumulative: Vec<f64>,
}

impl ShiftedZipf {
    fn new(domain: u64, a: f64, b: f64) -> Result<ShiftedZipf> {
        if domain == 0 || !(a >= 0.0) || !a.is_finite() || !(b > 0.0) || !b.is_finite() {
            return Err(Error::invalid(format!(
                "zipf needs domain >= 1, a >= 0, and b > 0; got U={domain} a={a} b={b}"
            )));
        }
        let mut cumulative = Vec::with_capacity(domain as usize);
        let mut total = 0.0f64;
        for x in 1..=domain {
            total += (x as f64 + a).powf(-b);
            cumulative.push(total);
        }
        Ok(ShiftedZipf { cumulative })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let total = *self.cumulative.last().expect("nonempty support");
        let u = rng.gen::<f64>() * total;
        let idx = self.cumulative.partition_point(|&c| c < u);
        (idx as u64 + 1).min(self.cumulative.len() as u64)
    }
}

fn generate_scalar<R: Rng + ?Sized>(
    kind: &GeneratorKind,
    n: u64,
    domain: u64,
    rng: &mut R,
) -> Result<(Vec<u64>, u32)> {
    let mut clamped = 0u32;
    let values = match kind {
        GeneratorKind::Zipf { a, b } => {
            let sampler = ShiftedZipf::new(domain, *a, *b)?;
            (0..n).map(|_| sampler.sample(rng)).collect()
        }
        GeneratorKind::Gauss { mu, sigma } => {
            let normal = rand_distr::Normal::new(*mu, *sigma)
                .map_err(|e| Error::invalid(format!("gauss parameters: {e}")))?;
            (0..n)
                .map(|_| {
                    let raw = normal.sample(rng).round();
                    if raw < 0.0 || raw > domain as f64 {
                        clamped += 1;
                    }
                    raw.clamp(0.0, domain as f64) as u64
                })
                .collect()
        }
        GeneratorKind::Constant { value } => {
            if *value > domain {
                clamped = n.min(u32::MAX as u64) as u32;
            }
            vec![(*value).min(domain); n as usize]
        }
        GeneratorKind::BinarySparse { .. } => {
            return Err(Error::invalid("binary_sparse generates binary vectors, not scalars"));
        }
    };
    Ok((values, clamped))
}

fn generate_binary<R: Rng + ?Sized>(
    kind: &GeneratorKind,
    n: u64,
    dim: u32,
    rng: &mut R,
) -> Result<Vec<Vec<u32>>> {
    let (max_ones, skew) = match kind {
        GeneratorKind::BinarySparse { max_ones, skew } => (*max_ones, *skew),
        other => {
            return Err(Error::invalid(format!(
                "binary protocols need the binary_sparse generator, got {other:?}"
            )))
        }
    };
    if max_ones == 0 || max_ones > dim {
        return Err(Error::invalid(format!("max_ones must lie in 1..={dim}, got {max_ones}")));
    }
    if !(skew >= 0.0) || !skew.is_finite() {
        return Err(Error::invalid(format!("skew must be non-negative, got {skew}")));
    }
    let popularity = if skew > 0.0 { Some(ShiftedZipf::new(dim as u64, 0.0, skew)?) } else { None };
    let mut rows = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let l1 = rng.gen_range(1..=max_ones) as usize;
        let mut ones: Vec<u32> = match &popularity {
            None => {
                rand::seq::index::sample(rng, dim as usize, l1).iter().map(|k| k as u32).collect()
            }
            Some(sampler) => {
                let mut picked = Vec::with_capacity(l1);
                let mut attempts = 0u32;
                while picked.len() < l1 {
                    let k = if attempts < 10_000 {
                        (sampler.sample(rng) - 1) as u32
                    } else {
                        // Popularity skew made distinct draws too rare;
                        // fall back to the smallest unused index.
                        (0..dim).find(|k| !picked.contains(k)).expect("l1 <= dim")
                    };
                    attempts += 1;
                    if !picked.contains(&k) {
                        picked.push(k);
                    }
                }
                picked
            }
        };
        ones.sort_unstable();
        rows.push(ones);
    }
    Ok(rows)
}

/// Builds the dataset a protocol consumes. Vector data embeds one scalar
/// draw per user at a uniformly random coordinate, so the realized norms
/// track the generator's values rather than the configured bound.
pub fn build_dataset(
    spec: &DatasetSpec,
    protocol: Protocol,
    seed: &StreamSeed,
) -> Result<(Dataset, DatasetSummary)> {
    match spec {
        DatasetSpec::Generate { kind, n, domain, dim, l2_bound } => {
            if *n == 0 {
                return Err(Error::invalid("generator population n must be at least 1"));
            }
            let mut rng = seed.rng();
            match protocol.shape() {
                DataShape::Scalar => {
                    if *domain == 0 {
                        return Err(Error::invalid("domain bound U must be at least 1"));
                    }
                    let (values, clamped) = generate_scalar(kind, *n, *domain, &mut rng)?;
                    let ds = ScalarDataset::new(values, *domain)?;
                    let summary = DatasetSummary {
                        n: *n,
                        shape: "scalar".into(),
                        domain: Some(*domain),
                        dim: None,
                        max_value: Some(ds.max()),
                        max_l2: None,
                        max_l1: None,
                        true_sum: Some(ds.sum() as f64),
                        skipped_rows: 0,
                        clamped_values: clamped,
                    };
                    Ok((Dataset::Scalar(ds), summary))
                }
                DataShape::Vectors => {
                    let dim = dim.ok_or_else(|| Error::invalid("vector protocols need --d"))?;
                    let l2 = l2_bound.ok_or_else(|| Error::invalid("vector protocols need --U-l2"))?;
                    if dim == 0 || l2 == 0 {
                        return Err(Error::invalid("dimension and l2 bound must be at least 1"));
                    }
                    let cap = (*domain).min(l2);
                    let (values, clamped) = generate_scalar(kind, *n, cap.max(1), &mut rng)?;
                    let rows: Vec<Vec<u64>> = values
                        .iter()
                        .map(|&v| {
                            let mut row = vec![0u64; dim as usize];
                            row[rng.gen_range(0..dim) as usize] = v;
                            row
                        })
                        .collect();
                    let max_l2 = values.iter().copied().max().unwrap_or(0) as f64;
                    let summary = DatasetSummary {
                        n: *n,
                        shape: "vectors".into(),
                        domain: Some(*domain),
                        dim: Some(dim),
                        max_value: None,
                        max_l2: Some(max_l2),
                        max_l1: None,
                        true_sum: None,
                        skipped_rows: 0,
                        clamped_values: clamped,
                    };
                    Ok((Dataset::Vectors { rows, dim, l2_bound: l2 }, summary))
                }
                DataShape::Binary => {
                    let dim = dim.ok_or_else(|| Error::invalid("binary protocols need --d"))?;
                    if dim == 0 {
                        return Err(Error::invalid("dimension must be at least 1"));
                    }
                    let rows = generate_binary(kind, *n, dim, &mut rng)?;
                    let max_l1 = rows.iter().map(|r| r.len() as u64).max().unwrap_or(0);
                    let summary = DatasetSummary {
                        n: *n,
                        shape: "binary".into(),
                        domain: None,
                        dim: Some(dim),
                        max_value: None,
                        max_l2: None,
                        max_l1: Some(max_l1),
                        true_sum: None,
                        skipped_rows: 0,
                        clamped_values: 0,
                    };
                    Ok((Dataset::Binary { rows, dim }, summary))
                }
            }
        }
        DatasetSpec::File { path, column, domain } => {
            if protocol.shape() != DataShape::Scalar {
                return Err(Error::invalid("file datasets are scalar; vector protocols need a generator"));
            }
            let (ds, skipped, clamped) = ingest_csv(path, column.as_deref(), *domain)?;
            let summary = DatasetSummary {
                n: ds.n(),
                shape: "scalar".into(),
                domain: Some(ds.domain()),
                dim: None,
                max_value: Some(ds.max()),
                max_l2: None,
                max_l1: None,
                true_sum: Some(ds.sum() as f64),
                skipped_rows: skipped,
                clamped_values: clamped,
            };
            Ok((Dataset::Scalar(ds), summary))
        }
    }
}

/// Reads scalar values from a CSV file. With a column name the file must
/// have a header row; without one the first field of each row is used.
/// Non-numeric rows are skipped and counted; values are clamped to
/// [0, domain] (observed maximum when no domain is given) and clamps are
/// counted.
pub fn ingest_csv(
    path: &str,
    column: Option<&str>,
    domain: Option<u64>,
) -> Result<(ScalarDataset, u32, u32)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(column.is_some())
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::dataset(format!("cannot read {path}: {e}")))?;
    let col = match column {
        Some(name) => {
            let headers = reader.headers().map_err(|e| Error::dataset(format!("{path}: {e}")))?;
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::dataset(format!("{path}: no column named {name:?}")))?
        }
        None => 0,
    };
    let mut skipped = 0u32;
    let mut clamped = 0u32;
    let mut values = Vec::new();
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let parsed = record.get(col).and_then(|f| f.trim().parse::<f64>().ok());
        match parsed {
            Some(v) if v.is_finite() => {
                let rounded = v.round();
                if rounded < 0.0 {
                    clamped += 1;
                    values.push(0u64);
                } else {
                    values.push(rounded as u64);
                }
            }
            _ => skipped += 1,
        }
    }
    if values.is_empty() {
        return Err(Error::dataset(format!("{path}: no numeric values found")));
    }
    let bound = domain.unwrap_or_else(|| values.iter().copied().max().unwrap_or(1).max(1));
    for v in &mut values {
        if *v > bound {
            *v = bound;
            clamped += 1;
        }
    }
    Ok((ScalarDataset::new(values, bound)?, skipped, clamped))
}

fn default_epsilon() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    1e-12
}
fn default_beta() -> f64 {
    0.1
}
fn default_trials() -> u32 {
    50
}
fn default_trim() -> u32 {
    10
}
fn default_flood() -> f64 {
    1.0
}

/// One experiment: a protocol, a budget, a dataset, and trial discipline.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub dataset: DatasetSpec,
    #[serde(default = "default_trials")]
    pub trials: u32,
    #[serde(default = "default_trim")]
    pub trim: u32,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub noiseless: bool,
    #[serde(default = "default_flood")]
    pub flood_constant: f64,
}

impl ExperimentConfig {
    pub fn new(protocol: Protocol, dataset: DatasetSpec) -> Self {
        ExperimentConfig {
            protocol,
            epsilon: default_epsilon(),
            delta: default_delta(),
            beta: default_beta(),
            dataset,
            trials: default_trials(),
            trim: default_trim(),
            master_seed: 0,
            noiseless: false,
            flood_constant: default_flood(),
        }
    }

    pub fn budget(&self) -> Result<PrivacyBudget> {
        PrivacyBudget::new(self.epsilon, self.delta, self.beta)
    }

    pub fn validate(&self) -> Result<()> {
        self.budget()?;
        if self.trials == 0 || self.trials <= 2 * self.trim {
            return Err(Error::invalid(format!(
                "trials ({}) must exceed twice the trim count ({})",
                self.trials, self.trim
            )));
        }
        if !(self.flood_constant >= 0.0) || !self.flood_constant.is_finite() {
            return Err(Error::invalid("flood constant must be non-negative"));
        }
        Ok(())
    }
}

/// One trial's outcome, serialized into the JSON document.
#[derive(Clone, Debug, Serialize)]
pub struct TrialReport {
    pub trial: u32,
    /// Scalar protocols only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<f64>,
    /// The protocol's headline error (absolute, L2, or L-infinity).
    pub error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rel_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linf_error: Option<f64>,
    pub messages_per_user: f64,
    pub bits_per_message: u32,
    pub wall_ms: f64,
}

/// Aggregated outcome of one experiment.
#[derive(Clone, Debug, Serialize)]
pub struct AggregateReport {
    pub config: ExperimentConfig,
    pub dataset: DatasetSummary,
    /// True scalar sum, or the norm matching the protocol's metric.
    pub true_value: f64,
    pub trimmed_mean_error: f64,
    /// 100 * trimmed_mean_error / true_value; absent when the truth is 0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub re_percent: Option<f64>,
    pub mean_messages_per_user: f64,
    pub bits_per_message: u32,
    pub retained_trials: u32,
    pub trials: Vec<TrialReport>,
}

enum Estimate {
    Scalar(f64),
    Vector(Vec<f64>),
}

struct Truth {
    /// Scalar sum, or per-dimension sums.
    scalar: Option<f64>,
    vector: Option<Vec<f64>>,
}

impl Truth {
    fn of(dataset: &Dataset) -> Truth {
        match dataset {
            Dataset::Scalar(ds) => Truth { scalar: Some(ds.sum() as f64), vector: None },
            Dataset::Vectors { rows, dim, .. } => {
                let mut sums = vec![0f64; *dim as usize];
                for row in rows {
                    for (k, &v) in row.iter().enumerate() {
                        sums[k] += v as f64;
                    }
                }
                Truth { scalar: None, vector: Some(sums) }
            }
            Dataset::Binary { rows, dim } => {
                let mut sums = vec![0f64; *dim as usize];
                for row in rows {
                    for &k in row {
                        sums[k as usize] += 1.0;
                    }
                }
                Truth { scalar: None, vector: Some(sums) }
            }
        }
    }

    /// Denominator of relative error under the given metric.
    fn norm(&self, metric: ErrorMetric) -> f64 {
        match (metric, &self.scalar, &self.vector) {
            (ErrorMetric::Absolute, Some(s), _) => s.abs(),
            (ErrorMetric::L2, _, Some(v)) => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            (ErrorMetric::LInf, _, Some(v)) => v.iter().fold(0.0f64, |m, &x| m.max(x.abs())),
            _ => 0.0,
        }
    }
}

fn zero_traffic() -> Traffic {
    Traffic { messages_per_user: 0.0, bits_per_message: 0 }
}

fn run_trial(
    config: &ExperimentConfig,
    budget: &PrivacyBudget,
    dataset: &Dataset,
    seed: &StreamSeed,
) -> Result<(Estimate, Traffic)> {
    let zeta = base_sum::default_zeta(budget.epsilon);
    match (config.protocol, dataset) {
        (Protocol::Base, Dataset::Scalar(ds)) => {
            let p = BaseParams::with_tuning(
                *budget,
                ds.n(),
                ds.domain(),
                DEFAULT_LAMBDA,
                zeta,
                config.flood_constant,
                config.noiseless,
            )?;
            let (est, traffic) = base_sum::run_aggregated(ds.values(), &p, seed)?;
            Ok((Estimate::Scalar(est), traffic))
        }
        (Protocol::Sum, Dataset::Scalar(ds)) => {
            let p = SumParams::with_tuning(
                *budget,
                ds.n(),
                ds.domain(),
                DEFAULT_LAMBDA,
                zeta,
                config.flood_constant,
                config.noiseless,
            )?;
            let (est, _, traffic) = sum_dp::run_aggregated(ds.values(), &p, seed)?;
            Ok((Estimate::Scalar(est), traffic))
        }
        (Protocol::HighDim, Dataset::Vectors { rows, dim, l2_bound }) => {
            let p = HighDimParams::with_tuning(
                *budget,
                rows.len() as u64,
                *dim,
                *l2_bound,
                DEFAULT_LAMBDA,
                zeta,
                config.flood_constant,
                config.noiseless,
            )?;
            let (est, traffic) = high_dim::run_aggregated(rows, &p, seed)?;
            Ok((Estimate::Vector(est), traffic))
        }
        (Protocol::Sparse, Dataset::Binary { rows, dim }) => {
            let p = SparseParams::with_tuning(
                *budget,
                rows.len() as u64,
                *dim,
                DEFAULT_LAMBDA,
                zeta,
                config.flood_constant,
                config.noiseless,
            )?;
            let (est, _, traffic) = sparse_vec::run_aggregated(rows, &p, seed)?;
            Ok((Estimate::Vector(est), traffic))
        }
        (Protocol::NaiveVec, Dataset::Binary { rows, dim }) => {
            let p = SparseParams::with_tuning(
                *budget,
                rows.len() as u64,
                *dim,
                DEFAULT_LAMBDA,
                zeta,
                config.flood_constant,
                config.noiseless,
            )?;
            let (est, traffic) = sparse_vec::run_naive_aggregated(rows, &p, seed)?;
            Ok((Estimate::Vector(est), traffic))
        }
        (Protocol::CentralLaplace, Dataset::Scalar(ds)) => {
            let mut rng = seed.rng();
            let est = baselines::central_laplace(ds, budget.epsilon, config.noiseless, &mut rng);
            Ok((Estimate::Scalar(est), zero_traffic()))
        }
        (Protocol::CentralClip, Dataset::Scalar(ds)) => {
            let mut rng = seed.rng();
            let est = baselines::central_clipping_reference(
                ds,
                budget.epsilon,
                budget.beta,
                config.noiseless,
                &mut rng,
            );
            Ok((Estimate::Scalar(est), zero_traffic()))
        }
        _ => Err(Error::violation("protocol and dataset shape do not match")),
    }
}

fn make_report(
    trial: u32,
    estimate: &Estimate,
    truth: &Truth,
    metric: ErrorMetric,
    traffic: &Traffic,
    wall_ms: f64,
) -> TrialReport {
    match estimate {
        Estimate::Scalar(e) => {
            let t = truth.scalar.unwrap_or(0.0);
            let abs = (e - t).abs();
            TrialReport {
                trial,
                estimate: Some(*e),
                error: abs,
                rel_error: (t != 0.0).then(|| abs / t.abs()),
                l2_error: None,
                linf_error: None,
                messages_per_user: traffic.messages_per_user,
                bits_per_message: traffic.bits_per_message,
                wall_ms,
            }
        }
        Estimate::Vector(e) => {
            let zero = Vec::new();
            let t = truth.vector.as_ref().unwrap_or(&zero);
            let l2 = e
                .iter()
                .zip(t)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let linf = e
                .iter()
                .zip(t)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            let error = if metric == ErrorMetric::L2 { l2 } else { linf };
            let denom = truth.norm(metric);
            TrialReport {
                trial,
                estimate: None,
                error,
                rel_error: (denom != 0.0).then(|| error / denom),
                l2_error: Some(l2),
                linf_error: Some(linf),
                messages_per_user: traffic.messages_per_user,
                bits_per_message: traffic.bits_per_message,
                wall_ms,
            }
        }
    }
}

/// Runs `trials` seeded rounds on one dataset, trims the extremes, and
/// aggregates. The dataset is generated once from the master seed; each
/// trial consumes an independent derived stream, so trials parallelize
/// deterministically.
pub fn run_experiment(config: &ExperimentConfig) -> Result<AggregateReport> {
    config.validate()?;
    let budget = config.budget()?;
    let master = StreamSeed::new(config.master_seed);
    let (dataset, summary) = build_dataset(&config.dataset, config.protocol, &master.child(0))?;
    let truth = Truth::of(&dataset);
    let metric = config.protocol.metric();
    let trial_root = master.child(1);
    let reports: Result<Vec<TrialReport>> = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let started = Instant::now();
            let (estimate, traffic) = run_trial(config, &budget, &dataset, &trial_root.child(t as u64))?;
            let wall_ms = started.elapsed().as_secs_f64() * 1e3;
            Ok(make_report(t, &estimate, &truth, metric, &traffic, wall_ms))
        })
        .collect();
    let reports = reports?;

    let mut errors: Vec<f64> = reports.iter().map(|r| r.error).collect();
    errors.sort_by(f64::total_cmp);
    let retained = &errors[config.trim as usize..errors.len() - config.trim as usize];
    let trimmed_mean_error = retained.iter().sum::<f64>() / retained.len() as f64;
    let true_value = truth.norm(metric);
    let re_percent = (true_value != 0.0).then(|| 100.0 * trimmed_mean_error / true_value);
    let mean_messages_per_user =
        reports.iter().map(|r| r.messages_per_user).sum::<f64>() / reports.len() as f64;
    let bits_per_message = reports.iter().map(|r| r.bits_per_message).max().unwrap_or(0);

    Ok(AggregateReport {
        config: config.clone(),
        dataset: summary,
        true_value,
        trimmed_mean_error,
        re_percent,
        mean_messages_per_user,
        bits_per_message,
        retained_trials: retained.len() as u32,
        trials: reports,
    })
}

/// Swept parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    N,
    U,
    Sigma,
    Epsilon,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::N => "n",
            Axis::U => "U",
            Axis::Sigma => "sigma",
            Axis::Epsilon => "epsilon",
        })
    }
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" => Ok(Axis::N),
            "U" | "u" => Ok(Axis::U),
            "sigma" => Ok(Axis::Sigma),
            "epsilon" => Ok(Axis::Epsilon),
            other => Err(Error::invalid(format!(
                "unknown sweep axis {other:?}; expected n, U, sigma, or epsilon"
            ))),
        }
    }
}

fn integer_axis_value(axis: Axis, value: f64) -> Result<u64> {
    if !(value >= 1.0) || value.fract() != 0.0 || value > u64::MAX as f64 {
        return Err(Error::invalid(format!("axis {axis} takes positive integers, got {value}")));
    }
    Ok(value as u64)
}

/// Returns the config with one axis substituted. The master seed is left
/// untouched, so every sweep point sees the same random streams.
pub fn apply_axis(config: &ExperimentConfig, axis: Axis, value: f64) -> Result<ExperimentConfig> {
    let mut out = config.clone();
    match (axis, &mut out.dataset) {
        (Axis::N, DatasetSpec::Generate { n, .. }) => *n = integer_axis_value(axis, value)?,
        (Axis::N, DatasetSpec::File { .. }) => {
            return Err(Error::invalid("cannot sweep n over a file dataset"));
        }
        (Axis::U, DatasetSpec::Generate { domain, .. }) => {
            *domain = integer_axis_value(axis, value)?;
        }
        (Axis::U, DatasetSpec::File { domain, .. }) => {
            *domain = Some(integer_axis_value(axis, value)?);
        }
        (Axis::Sigma, DatasetSpec::Generate { kind: GeneratorKind::Gauss { sigma, .. }, .. }) => {
            if !(value > 0.0) {
                return Err(Error::invalid(format!("sigma must be positive, got {value}")));
            }
            *sigma = value;
        }
        (Axis::Sigma, _) => {
            return Err(Error::invalid("sigma sweeps need the gauss generator"));
        }
        (Axis::Epsilon, _) => {
            if !(value > 0.0) {
                return Err(Error::invalid(format!("epsilon must be positive, got {value}")));
            }
            out.epsilon = value;
        }
    }
    Ok(out)
}

/// One experiment per axis value, constant master seed throughout.
pub fn sweep(config: &ExperimentConfig, axis: Axis, values: &[f64]) -> Result<Vec<AggregateReport>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one axis value"));
    }
    values.iter().map(|&v| run_experiment(&apply_axis(config, axis, v)?)).collect()
}

#[derive(Serialize)]
struct CsvRow<'a> {
    axis_value: Option<f64>,
    protocol: &'a str,
    trimmed_mean_error: f64,
    re_percent: Option<f64>,
    messages_per_user: f64,
    bits_per_message: u32,
}

/// Flat summary table: one row per experiment. `axis_values` pairs with the
/// reports for sweeps and is empty for single runs.
pub fn write_summary_csv<W: std::io::Write>(
    out: W,
    reports: &[AggregateReport],
    axis_values: &[f64],
) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for (i, report) in reports.iter().enumerate() {
        let row = CsvRow {
            axis_value: axis_values.get(i).copied(),
            protocol: report.config.protocol.name(),
            trimmed_mean_error: report.trimmed_mean_error,
            re_percent: report.re_percent,
            messages_per_user: report.mean_messages_per_user,
            bits_per_message: report.bits_per_message,
        };
        writer
            .serialize(row)
            .map_err(|e| Error::dataset(format!("csv write: {e}")))?;
    }
    writer.flush()?;
    Ok(())
}

/// The experiment results as one JSON document.
pub fn to_json_document(reports: &[AggregateReport], axis: Option<Axis>) -> String {
    #[derive(Serialize)]
    struct Document<'a> {
        #[serde(skip_serializing_if = "Option::is_none")]
        axis: Option<Axis>,
        experiments: &'a [AggregateReport],
    }
    let mut doc = serde_json::to_string_pretty(&Document { axis, experiments: reports })
        .expect("reports serialize");
    doc.push('\n');
    doc
}
