// SPDX-License-Identifier: Apache-2.0

//! Sparse binary vector aggregation with L-infinity error.
//!
//! Users hold binary vectors over d dimensions, most of them with few ones.
//! Splitting the budget uniformly across all d dimensions (the naive
//! baseline here) prices every user as if they touched every dimension.
//! Instead users are bucketed by sparsity — bucket j covers L1 norms in
//! [2^(j-1)+1, 2^j] — so a user in bucket j touches at most 2^j sum
//! instances and one counter. Counters run at half the budget under
//! parallel composition; within a bucket the per-dimension sum instances
//! share the other half under advanced composition over 2^j steps. The
//! analyzer keeps only buckets up to the largest one whose noisy user count
//! clears a bar, so empty buckets contribute neither error nor signal.

use crate::base_sum::BaseParams;
use crate::budget::PrivacyBudget;
use crate::error::{Error, Result};
use crate::rng::StreamSeed;
use crate::shuffle::{self, ceil_log2, CommStats, InstanceLayout, InstanceTag, MessageBag, ProtocolKind, Sign, Traffic};
use rand::Rng;
use std::collections::BTreeMap;

/// Constant in the documented L-infinity error bound.
pub const SPARSE_ERROR_CONSTANT: f64 = 8.0;

/// Parameters of one sparse-aggregation round.
#[derive(Clone, Copy, Debug)]
pub struct SparseParams {
    pub budget: PrivacyBudget,
    pub n: u64,
    /// Dimension of the input vectors.
    pub dim_raw: u32,
    /// Power-of-two padded dimension; buckets run over 2^0 .. 2^log2(dim).
    pub dim: u32,
    pub lambda: f64,
    pub zeta: f64,
    pub flood_constant: f64,
    pub noiseless: bool,
}

/// Outcome of the sparsity selection step.
#[derive(Clone, Debug)]
pub struct SparsityDecision {
    /// Selected sparsity cutoff: 2^j* for the last bucket whose count
    /// cleared the bar, or 0 when none did.
    pub tau: u64,
    pub count_estimates: Vec<f64>,
    pub bar: f64,
    pub passed: Vec<bool>,
}

/// Bucket index of a vector with L1 norm `l1`: the j with
/// l1 in [2^(j-1)+1, 2^j]; none for the zero vector.
pub fn sparsity_index(l1: u64) -> Option<u32> {
    if l1 == 0 {
        None
    } else {
        Some(ceil_log2(l1))
    }
}

/// Bar a bucket's noisy user count must clear:
/// 1.3 * (2/epsilon) * ln(2 (log d + 1) / beta).
pub fn count_bar(log_dim: u32, epsilon: f64, beta: f64) -> f64 {
    1.3 * (2.0 / epsilon) * (2.0 * (log_dim as f64 + 1.0) / beta).ln()
}

impl SparseParams {
    pub fn new(budget: PrivacyBudget, n: u64, dim_raw: u32) -> Result<Self> {
        Self::with_tuning(budget, n, dim_raw, crate::base_sum::DEFAULT_LAMBDA, crate::base_sum::default_zeta(budget.epsilon), 1.0, false)
    }

    pub fn with_tuning(
        budget: PrivacyBudget,
        n: u64,
        dim_raw: u32,
        lambda: f64,
        zeta: f64,
        flood_constant: f64,
        noiseless: bool,
    ) -> Result<Self> {
        if dim_raw == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if n == 0 {
            return Err(Error::invalid("population size n must be at least 1"));
        }
        Ok(SparseParams {
            budget,
            n,
            dim_raw,
            dim: dim_raw.next_power_of_two(),
            lambda,
            zeta,
            flood_constant,
            noiseless,
        })
    }

    pub fn log_dim(&self) -> u32 {
        self.dim.trailing_zeros()
    }

    pub fn buckets(&self) -> u32 {
        self.log_dim() + 1
    }

    /// Each user's counter indicator lands in exactly one bucket, so the
    /// counters compose in parallel at half the budget.
    pub fn count_budget(&self) -> PrivacyBudget {
        PrivacyBudget::new(self.budget.epsilon / 2.0, self.budget.delta / 2.0, self.budget.beta)
            .expect("derived budget is valid")
    }

    /// A user in bucket j touches at most 2^j of the bucket's sum
    /// instances; their budgets are sized so that 2^j adaptive steps
    /// recompose within the remaining (epsilon/2, delta/2).
    pub fn sum_budget(&self, j: u32) -> PrivacyBudget {
        crate::budget::split_evenly(&self.count_budget(), 1u32 << j)
            .expect("derived budget is valid")
    }

    pub fn count_params(&self) -> BaseParams {
        self.base_with(self.count_budget())
    }

    pub fn sum_params(&self, j: u32) -> BaseParams {
        self.base_with(self.sum_budget(j))
    }

    fn base_with(&self, budget: PrivacyBudget) -> BaseParams {
        BaseParams::with_tuning(budget, self.n, 1, self.lambda, self.zeta, self.flood_constant, self.noiseless)
            .expect("validated parameters")
    }

    pub fn count_tag(&self, j: u32) -> InstanceTag {
        InstanceTag::dimensional(ProtocolKind::SparseCount, j as i16, 0, Sign::None)
    }

    pub fn sum_tag(&self, j: u32, k: u32) -> InstanceTag {
        InstanceTag::dimensional(ProtocolKind::SparseSum, j as i16, k, Sign::None)
    }

    pub fn bar(&self) -> f64 {
        count_bar(self.log_dim(), self.budget.epsilon, self.budget.beta)
    }

    pub fn declare(&self, layout: &mut InstanceLayout) {
        for j in 0..self.buckets() {
            self.count_params().declare(self.count_tag(j), layout);
            let sum = self.sum_params(j);
            for k in 0..self.dim {
                sum.declare(self.sum_tag(j, k), layout);
            }
        }
    }

    /// One user's messages: an indicator into every bucket counter and the
    /// user's bits into their own bucket's per-dimension instances (zeros
    /// into all others).
    pub fn randomize<R: Rng + ?Sized>(&self, ones: &[u32], rng: &mut R) -> MessageBag {
        let own = sparsity_index(ones.len() as u64);
        let mut is_set = vec![false; self.dim as usize];
        for &k in ones {
            is_set[k as usize] = true;
        }
        let mut bag = MessageBag::new();
        let count = self.count_params();
        for j in 0..self.buckets() {
            let indicator = (own == Some(j)) as u64;
            bag.extend(count.randomize(self.count_tag(j), indicator, rng));
            let sum = self.sum_params(j);
            for k in 0..self.dim {
                let bit = (own == Some(j) && is_set[k as usize]) as u64;
                bag.extend(sum.randomize(self.sum_tag(j, k), bit, rng));
            }
        }
        bag
    }

    /// Applies the count bar: tau is the width of the highest bucket whose
    /// estimated user count clears it.
    pub fn select_sparsity_threshold(&self, count_estimates: &[f64]) -> SparsityDecision {
        debug_assert_eq!(count_estimates.len(), self.buckets() as usize);
        let bar = self.bar();
        let passed: Vec<bool> = count_estimates.iter().map(|&c| c > bar).collect();
        let tau = passed.iter().rposition(|&p| p).map_or(0, |j| 1u64 << j);
        SparsityDecision { tau, count_estimates: count_estimates.to_vec(), bar, passed }
    }

    /// Estimate from per-instance payload sums: select the sparsity cutoff
    /// from the counters, then total the included buckets per dimension.
    pub fn analyze(&self, sums: &BTreeMap<InstanceTag, i128>) -> Result<(Vec<f64>, SparsityDecision)> {
        let count = self.count_params();
        let mut counts = Vec::with_capacity(self.buckets() as usize);
        for j in 0..self.buckets() {
            let tag = self.count_tag(j);
            let s = sums.get(&tag).ok_or_else(|| Error::violation(format!("missing instance group {tag}")))?;
            counts.push(count.analyze(*s));
        }
        let decision = self.select_sparsity_threshold(&counts);
        let mut estimate = vec![0.0f64; self.dim as usize];
        for j in 0..self.buckets() {
            let include = decision.tau >= (1u64 << j);
            let sum = self.sum_params(j);
            for k in 0..self.dim {
                let tag = self.sum_tag(j, k);
                let s = sums.get(&tag).ok_or_else(|| Error::violation(format!("missing instance group {tag}")))?;
                if include {
                    estimate[k as usize] += sum.analyze(*s);
                }
            }
        }
        estimate.truncate(self.dim_raw as usize);
        Ok((estimate, decision))
    }

    /// Estimate error bound: with probability 1 - beta the L-infinity error
    /// stays within
    /// SPARSE_ERROR_CONSTANT * (max_l2 sqrt(ln(1/delta)) + ln(log d + 1)) * ln(d/beta) / epsilon
    /// where max_l2 is the largest vector norm in the data.
    pub fn error_bound(&self, max_l2: f64, beta: f64) -> f64 {
        SPARSE_ERROR_CONSTANT
            * (max_l2 * (1.0 / self.budget.delta).ln().sqrt() + (self.log_dim() as f64 + 1.0).ln())
            * (self.dim as f64 / beta).ln()
            / self.budget.epsilon
    }

    /// Expected messages per user: the data term is the user's L1 norm plus
    /// one counter indicator; the noise term spans every instance.
    pub fn expected_messages_per_user(&self, data: &[Vec<u32>]) -> f64 {
        let data_term: f64 = data
            .iter()
            .map(|ones| ones.len() as f64 + (!ones.is_empty()) as u64 as f64)
            .sum::<f64>()
            / data.len().max(1) as f64;
        let noise: f64 = (0..self.buckets())
            .map(|j| {
                self.count_params().expected_noise_messages()
                    + self.dim as f64 * self.sum_params(j).expected_noise_messages()
            })
            .sum();
        data_term + noise
    }

    fn validate(&self, data: &[Vec<u32>]) -> Result<()> {
        if data.is_empty() {
            return Err(Error::dataset("dataset must contain at least one user"));
        }
        for (i, ones) in data.iter().enumerate() {
            for w in ones.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::dataset(format!(
                        "user {i}: indices must be strictly increasing"
                    )));
                }
            }
            if let Some(&last) = ones.last() {
                if last >= self.dim_raw {
                    return Err(Error::dataset(format!(
                        "user {i}: index {last} outside dimension {}",
                        self.dim_raw
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Full message-level round over index-of-ones vectors.
pub fn run_shuffled(
    data: &[Vec<u32>],
    params: &SparseParams,
    seed: &StreamSeed,
) -> Result<(Vec<f64>, SparsityDecision, CommStats)> {
    params.validate(data)?;
    let mut layout = InstanceLayout::new();
    params.declare(&mut layout);
    let (bag, stats) = shuffle::run_round(data, &layout, seed, |ones: &Vec<u32>, rng| {
        params.randomize(ones, rng)
    })?;
    let mut sums = shuffle::sums_by_tag(&bag);
    for (tag, _) in layout.instances() {
        sums.entry(*tag).or_insert(0);
    }
    let (estimate, decision) = params.analyze(&sums)?;
    Ok((estimate, decision, stats))
}

/// Distribution-equivalent round without message materialization. Domain-1
/// instances never round, so the data side is an exact tally and only the
/// per-instance noise draws consume randomness.
pub fn run_aggregated(
    data: &[Vec<u32>],
    params: &SparseParams,
    seed: &StreamSeed,
) -> Result<(Vec<f64>, SparsityDecision, Traffic)> {
    params.validate(data)?;
    let buckets = params.buckets() as usize;
    let mut count_sums = vec![0i128; buckets];
    let mut sum_sums = vec![0i128; buckets * params.dim as usize];
    for ones in data {
        if let Some(j) = sparsity_index(ones.len() as u64) {
            count_sums[j as usize] += 1;
            for &k in ones {
                sum_sums[j as usize * params.dim as usize + k as usize] += 1;
            }
        }
    }
    let mut noise_rng = seed.child(1).rng();
    let mut by_tag = BTreeMap::new();
    let count = params.count_params();
    for j in 0..params.buckets() {
        let noisy = count_sums[j as usize] + count.total_noise(&mut noise_rng) as i128;
        by_tag.insert(params.count_tag(j), noisy);
        let sum = params.sum_params(j);
        for k in 0..params.dim {
            let s = sum_sums[j as usize * params.dim as usize + k as usize]
                + sum.total_noise(&mut noise_rng) as i128;
            by_tag.insert(params.sum_tag(j, k), s);
        }
    }
    let (estimate, decision) = params.analyze(&by_tag)?;
    let mut layout = InstanceLayout::new();
    params.declare(&mut layout);
    let traffic = Traffic {
        messages_per_user: params.expected_messages_per_user(data),
        bits_per_message: layout.bits_per_message(),
    };
    Ok((estimate, decision, traffic))
}

/// Naive per-dimension baseline: no bucketing, every dimension's counter
/// priced for the worst case by splitting the whole budget over d adaptive
/// steps.
pub fn naive_step_budget(params: &SparseParams) -> PrivacyBudget {
    crate::budget::split_evenly(&params.budget, params.dim).expect("derived budget is valid")
}

fn naive_base(params: &SparseParams) -> BaseParams {
    BaseParams::with_tuning(
        naive_step_budget(params),
        params.n,
        1,
        params.lambda,
        params.zeta,
        params.flood_constant,
        params.noiseless,
    )
    .expect("validated parameters")
}

fn naive_tag(k: u32) -> InstanceTag {
    InstanceTag::dimensional(ProtocolKind::SparseSum, -1, k, Sign::None)
}

/// Naive baseline round, aggregated execution.
pub fn run_naive_aggregated(
    data: &[Vec<u32>],
    params: &SparseParams,
    seed: &StreamSeed,
) -> Result<(Vec<f64>, Traffic)> {
    params.validate(data)?;
    let base = naive_base(params);
    let mut sums = vec![0i128; params.dim as usize];
    for ones in data {
        for &k in ones {
            sums[k as usize] += 1;
        }
    }
    let mut noise_rng = seed.child(1).rng();
    let mut layout = InstanceLayout::new();
    let mut estimate = Vec::with_capacity(params.dim as usize);
    for k in 0..params.dim {
        base.declare(naive_tag(k), &mut layout);
        estimate.push(base.analyze(sums[k as usize] + base.total_noise(&mut noise_rng) as i128));
    }
    estimate.truncate(params.dim_raw as usize);
    let data_term: f64 =
        data.iter().map(|o| o.len() as f64).sum::<f64>() / data.len().max(1) as f64;
    let traffic = Traffic {
        messages_per_user: data_term + params.dim as f64 * base.expected_noise_messages(),
        bits_per_message: layout.bits_per_message(),
    };
    Ok((estimate, traffic))
}
