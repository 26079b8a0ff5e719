// SPDX-License-Identifier: Apache-2.0

//! Scalar summation with a privately selected clipping threshold.
//!
//! The domain [1, U] is split into geometric sub-domains [1,1], [2,2],
//! [3,4], [5,8], ..., one bounded-sum instance per sub-domain, all sharing
//! one round. Because each user's value lands in exactly one sub-domain the
//! instances compose in parallel and every one of them runs at the full
//! (epsilon, delta). The analyzer compares each sub-domain's noisy sum
//! against a bar proportional to its width; the highest sub-domain that
//! clears its bar fixes the clipping threshold tau, and the estimate is the
//! total of the sub-domains up to tau. Error therefore tracks the largest
//! value present in the data, not the configured domain bound.

use crate::base_sum::BaseParams;
use crate::budget::PrivacyBudget;
use crate::error::{Error, Result};
use crate::rng::StreamSeed;
use crate::shuffle::{self, ceil_log2, CommStats, InstanceLayout, InstanceTag, MessageBag, ProtocolKind, Traffic};
use rand::Rng;
use std::collections::BTreeMap;

/// Constant in the selection error bound.
pub const SELECTION_ERROR_CONSTANT: f64 = 8.0;

/// Parameters of one threshold-selecting summation instance.
#[derive(Clone, Copy, Debug)]
pub struct SumParams {
    pub budget: PrivacyBudget,
    pub n: u64,
    /// Configured domain bound; values must lie in [0, domain].
    pub domain: u64,
    /// ceil(log2(domain)); sub-domains run over widths 2^0 .. 2^log_domain.
    pub log_domain: u32,
    pub lambda: f64,
    pub zeta: f64,
    pub flood_constant: f64,
    pub noiseless: bool,
    /// Which protocol family tags this instance's messages (embedding
    /// protocols reuse the machinery under their own tags).
    pub protocol: ProtocolKind,
    pub dimension: u32,
    pub sign: shuffle::Sign,
}

/// Outcome of the threshold selection step.
#[derive(Clone, Debug)]
pub struct ThresholdDecision {
    /// Selected clipping threshold; 0 when no sub-domain cleared its bar.
    pub tau: u64,
    /// Per-sub-domain noisy estimates, in data units.
    pub estimates: Vec<f64>,
    /// Per-sub-domain bars.
    pub bars: Vec<f64>,
    /// Whether each sub-domain cleared its bar.
    pub passed: Vec<bool>,
}

/// Bar that sub-domain j's estimate must clear before it contributes:
/// 1.3 * 2^j * ln(2 (log U + 1) / beta) / epsilon.
pub fn threshold_bar(j: u32, log_domain: u32, epsilon: f64, beta: f64) -> f64 {
    1.3 * (1u64 << j) as f64 * (2.0 * (log_domain as f64 + 1.0) / beta).ln() / epsilon
}

impl SumParams {
    pub fn new(budget: PrivacyBudget, n: u64, domain: u64) -> Result<Self> {
        Self::with_tuning(budget, n, domain, crate::base_sum::DEFAULT_LAMBDA, crate::base_sum::default_zeta(budget.epsilon), 1.0, false)
    }

    pub fn with_tuning(
        budget: PrivacyBudget,
        n: u64,
        domain: u64,
        lambda: f64,
        zeta: f64,
        flood_constant: f64,
        noiseless: bool,
    ) -> Result<Self> {
        if domain == 0 {
            return Err(Error::invalid("domain bound U must be at least 1"));
        }
        if n == 0 {
            return Err(Error::invalid("population size n must be at least 1"));
        }
        Ok(SumParams {
            budget,
            n,
            domain,
            log_domain: ceil_log2(domain),
            lambda,
            zeta,
            flood_constant,
            noiseless,
            protocol: ProtocolKind::Sum,
            dimension: 0,
            sign: shuffle::Sign::None,
        })
    }

    /// Re-tags the instance for use inside an embedding protocol.
    pub fn embedded(mut self, protocol: ProtocolKind, dimension: u32, sign: shuffle::Sign) -> Self {
        self.protocol = protocol;
        self.dimension = dimension;
        self.sign = sign;
        self
    }

    pub fn subdomains(&self) -> u32 {
        self.log_domain + 1
    }

    /// Sub-domain index of a nonzero value: the smallest j with x <= 2^j.
    pub fn partition_index(x: u64) -> Option<u32> {
        if x == 0 {
            None
        } else {
            Some(ceil_log2(x))
        }
    }

    /// Value range [lo, hi] covered by sub-domain j.
    pub fn subdomain_range(j: u32) -> (u64, u64) {
        if j == 0 {
            (1, 1)
        } else {
            ((1 << (j - 1)) + 1, 1 << j)
        }
    }

    pub fn tag(&self, j: u32) -> InstanceTag {
        InstanceTag::dimensional(self.protocol, j as i16, self.dimension, self.sign)
    }

    /// The bounded-sum instance serving sub-domain j. Parallel composition
    /// across disjoint sub-domains lets each run at the full budget.
    pub fn base_params(&self, j: u32) -> BaseParams {
        BaseParams::with_tuning(
            self.budget,
            self.n,
            1u64 << j,
            self.lambda,
            self.zeta,
            self.flood_constant,
            self.noiseless,
        )
        .expect("validated parameters")
    }

    pub fn bar(&self, j: u32) -> f64 {
        threshold_bar(j, self.log_domain, self.budget.epsilon, self.budget.beta)
    }

    pub fn declare(&self, layout: &mut InstanceLayout) {
        for j in 0..self.subdomains() {
            self.base_params(j).declare(self.tag(j), layout);
        }
    }

    /// One user's messages across all sub-domain instances. The user's value
    /// feeds only its own sub-domain; every other instance sees zero and
    /// contributes noise traffic only.
    pub fn randomize<R: Rng + ?Sized>(&self, x: u64, rng: &mut R) -> MessageBag {
        debug_assert!(x <= self.domain);
        let own = Self::partition_index(x);
        let mut bag = MessageBag::new();
        for j in 0..self.subdomains() {
            let value = if own == Some(j) { x } else { 0 };
            bag.extend(self.base_params(j).randomize(self.tag(j), value, rng));
        }
        bag
    }

    /// Applies the bars to per-sub-domain estimates: tau is the width of the
    /// highest sub-domain whose estimate clears its bar.
    pub fn select_threshold(&self, estimates: &[f64]) -> ThresholdDecision {
        debug_assert_eq!(estimates.len(), self.subdomains() as usize);
        let bars: Vec<f64> = (0..self.subdomains()).map(|j| self.bar(j)).collect();
        let passed: Vec<bool> = estimates.iter().zip(&bars).map(|(e, b)| e > b).collect();
        let tau = passed
            .iter()
            .rposition(|&p| p)
            .map_or(0, |j| 1u64 << j);
        ThresholdDecision { tau, estimates: estimates.to_vec(), bars, passed }
    }

    /// Estimate from per-instance payload sums: select tau, then total the
    /// sub-domains up to it. Requires one entry per sub-domain.
    pub fn analyze(&self, sums: &BTreeMap<InstanceTag, i128>) -> Result<(f64, ThresholdDecision)> {
        let mut estimates = Vec::with_capacity(self.subdomains() as usize);
        for j in 0..self.subdomains() {
            let tag = self.tag(j);
            let sum = sums
                .get(&tag)
                .ok_or_else(|| Error::violation(format!("missing instance group {tag}")))?;
            estimates.push(self.base_params(j).analyze(*sum));
        }
        let decision = self.select_threshold(&estimates);
        let estimate: f64 = estimates
            .iter()
            .enumerate()
            .filter(|(j, _)| decision.tau >= (1u64 << j))
            .map(|(_, e)| e)
            .sum();
        Ok((estimate, decision))
    }

    /// Estimate error bound: with probability 1 - beta the estimate is
    /// within SELECTION_ERROR_CONSTANT * max * ln((log U + 2) / beta) / eps
    /// of the true sum, where max is the largest value in the data.
    pub fn error_bound(&self, max_value: u64, beta: f64) -> f64 {
        SELECTION_ERROR_CONSTANT * max_value as f64 * ((self.log_domain as f64 + 2.0) / beta).ln()
            / self.budget.epsilon
    }

    /// Expected messages per user, with the data term averaged over `data`.
    pub fn expected_messages_per_user(&self, data: &[u64]) -> f64 {
        let noise: f64 = (0..self.subdomains())
            .map(|j| self.base_params(j).expected_noise_messages())
            .sum();
        let data_term: f64 = data
            .iter()
            .map(|&x| match Self::partition_index(x) {
                None => 0.0,
                Some(j) => self.base_params(j).data_message_probability(x),
            })
            .sum::<f64>()
            / data.len().max(1) as f64;
        data_term + noise
    }
}

/// Full message-level round: randomize every user, shuffle, group, analyze.
pub fn run_shuffled(data: &[u64], params: &SumParams, seed: &StreamSeed) -> Result<(f64, ThresholdDecision, CommStats)> {
    validate(data, params)?;
    let mut layout = InstanceLayout::new();
    params.declare(&mut layout);
    let (bag, stats) = shuffle::run_round(data, &layout, seed, |&x, rng| params.randomize(x, rng))?;
    let mut sums = shuffle::sums_by_tag(&bag);
    // Instances that happened to receive no messages still exist.
    for (tag, _) in layout.instances() {
        sums.entry(*tag).or_insert(0);
    }
    let (estimate, decision) = params.analyze(&sums)?;
    Ok((estimate, decision, stats))
}

/// Distribution-equivalent round without message materialization: per-user
/// rounding draws feed each sub-domain's data sum, one divisible draw per
/// instance supplies its noise, and traffic is reported in expectation.
pub fn run_aggregated(data: &[u64], params: &SumParams, seed: &StreamSeed) -> Result<(f64, ThresholdDecision, Traffic)> {
    validate(data, params)?;
    let per_j: Vec<BaseParams> = (0..params.subdomains()).map(|j| params.base_params(j)).collect();
    let mut sums: Vec<i128> = vec![0; per_j.len()];
    let mut data_rng = seed.child(0).rng();
    for &x in data {
        if let Some(j) = SumParams::partition_index(x) {
            sums[j as usize] += per_j[j as usize].round_value(x, &mut data_rng) as i128;
        }
    }
    let mut noise_rng = seed.child(1).rng();
    for (j, p) in per_j.iter().enumerate() {
        sums[j] += p.total_noise(&mut noise_rng) as i128;
    }
    let mut by_tag = BTreeMap::new();
    for (j, &s) in sums.iter().enumerate() {
        by_tag.insert(params.tag(j as u32), s);
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

fn validate(data: &[u64], params: &SumParams) -> Result<()> {
    if data.is_empty() {
        return Err(Error::dataset("dataset must contain at least one user"));
    }
    for &x in data {
        if x > params.domain {
            return Err(Error::dataset(format!("value {x} outside [0, {}]", params.domain)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn params(epsilon: f64, n: u64, domain: u64) -> SumParams {
        SumParams::new(PrivacyBudget::new(epsilon, 1e-12, 0.1).unwrap(), n, domain).unwrap()
    }

    #[test]
    fn partition_examples() {
        assert_eq!(SumParams::partition_index(0), None);
        assert_eq!(SumParams::partition_index(1), Some(0));
        assert_eq!(SumParams::partition_index(2), Some(1));
        assert_eq!(SumParams::partition_index(4), Some(2));
        assert_eq!(SumParams::partition_index(5), Some(3));
    }

    #[test]
    fn subdomains_tile_the_domain() {
        for x in 1u64..=1024 {
            let j = SumParams::partition_index(x).unwrap();
            let (lo, hi) = SumParams::subdomain_range(j);
            assert!(lo <= x && x <= hi, "x={x} j={j} range=({lo},{hi})");
            // No other sub-domain contains x.
            for other in 0..=10u32 {
                if other != j {
                    let (lo, hi) = SumParams::subdomain_range(other);
                    assert!(x < lo || x > hi);
                }
            }
        }
    }

    #[test]
    fn bar_values() {
        let p = params(1.0, 1000, 8);
        assert!((p.bar(0) - 5.696634625076046).abs() < 1e-12);
        assert!((p.bar(1) - 2.0 * p.bar(0)).abs() < 1e-12);
        assert!((p.bar(3) - 8.0 * p.bar(0)).abs() < 1e-12);
        // The bar vanishes when beta reaches 2 (log U + 1).
        assert!(threshold_bar(0, 3, 1.0, 8.0).abs() < 1e-12);
        // Halving epsilon doubles every bar.
        assert!((threshold_bar(2, 3, 0.5, 0.1) - 2.0 * threshold_bar(2, 3, 1.0, 0.1)).abs() < 1e-12);
    }

    #[test]
    fn threshold_selection_examples() {
        let p = params(1.0, 1000, 8);
        assert_eq!(p.select_threshold(&[0.0, 0.0, 0.0, 0.0]).tau, 0);
        assert_eq!(p.select_threshold(&[100.0, 0.0, 0.0, 0.0]).tau, 1);
        let d = p.select_threshold(&[100.0, 0.0, 60.0, 0.0]);
        assert_eq!(d.tau, 4);
        assert_eq!(d.passed, vec![true, false, true, false]);
    }

    #[test]
    fn noiseless_randomizer_emits_one_data_message() {
        let mut p = params(1.0, 1000, 8);
        p.noiseless = true;
        let mut rng = StreamSeed::new(1).child(0).rng();
        assert!(p.randomize(0, &mut rng).is_empty());
        let bag = p.randomize(6, &mut rng);
        assert_eq!(bag.len(), 1);
        assert_eq!(bag[0].tag, p.tag(3));
        assert_eq!(bag[0].payload, 6);
    }

    #[test]
    fn noiseless_estimate_matches_truncated_truth() {
        // Exact sums below tau, dropped values above: on random small
        // datasets the noiseless estimate equals the truncation oracle.
        let mut gen = StreamSeed::new(77).child(0).rng();
        let mut full_matches = 0;
        for trial in 0..100 {
            let n = gen.gen_range(1..=50u64);
            let domain = 1u64 << gen.gen_range(0..=6u32);
            let data: Vec<u64> = (0..n).map(|_| gen.gen_range(0..=domain)).collect();
            let mut p = params(1.0, n, domain);
            p.noiseless = true;
            let (estimate, decision, _) = run_shuffled(&data, &p, &StreamSeed::new(trial)).unwrap();
            let oracle: u64 = data.iter().filter(|&&x| x <= decision.tau).sum();
            assert_eq!(estimate, oracle as f64, "trial {trial} tau {}", decision.tau);
            // When every nonempty sub-domain clears its bar the estimate is
            // the full sum.
            let all_clear = (0..p.subdomains()).all(|j| {
                let (lo, hi) = SumParams::subdomain_range(j);
                let sub: u64 = data.iter().filter(|&&x| x >= lo && x <= hi).sum();
                sub == 0 || sub as f64 > p.bar(j)
            });
            if all_clear {
                assert_eq!(estimate, data.iter().sum::<u64>() as f64);
                full_matches += 1;
            }
        }
        assert!(full_matches >= 20, "only {full_matches} instances exercised the all-clear path");
    }

    #[test]
    fn analyze_requires_every_instance() {
        let p = params(1.0, 1000, 8);
        let mut sums = BTreeMap::new();
        sums.insert(p.tag(0), 5i128);
        assert!(matches!(p.analyze(&sums), Err(Error::ProtocolViolation(_))));
    }

    #[test]
    fn data_feeds_exactly_one_subdomain() {
        let mut p = params(1.0, 1000, 1024);
        p.noiseless = true;
        let mut rng = StreamSeed::new(2).child(0).rng();
        for x in [1u64, 2, 3, 17, 900, 1024] {
            let bag = p.randomize(x, &mut rng);
            assert_eq!(bag.len(), 1, "x={x}");
        }
    }

    #[test]
    fn error_bound_is_insensitive_to_domain_growth() {
        let max = 300u64;
        let small = params(1.0, 1000, 1 << 10).error_bound(max, 0.1);
        let large = params(1.0, 1000, 1 << 27).error_bound(max, 0.1);
        assert!(large / small < 1.35, "ratio {}", large / small);
        // And linear in the realized maximum.
        let p = params(1.0, 1000, 1 << 10);
        assert!((p.error_bound(600, 0.1) / p.error_bound(300, 0.1) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn expected_traffic_decreases_with_population() {
        let data: Vec<u64> = (0..1000).map(|i| i % 1025).collect();
        let mut last = f64::INFINITY;
        for &n in &[10_000u64, 1_000_000, 100_000_000] {
            let p = params(1.0, n, 1024);
            let m = p.expected_messages_per_user(&data);
            assert!(m < last, "n={n}: {m} >= {last}");
            last = m;
        }
        assert!(last < 1.5, "messages per user at n=1e8: {last}");
    }

    #[test]
    fn shuffled_round_smoke() {
        let n = 300u64;
        let p = params(5.0, n, 16);
        let data: Vec<u64> = (0..n).map(|i| 1 + (i % 16)).collect();
        let truth: f64 = data.iter().sum::<u64>() as f64;
        let (estimate, decision, stats) = run_shuffled(&data, &p, &StreamSeed::new(3)).unwrap();
        assert!(decision.tau >= 8, "tau {}", decision.tau);
        assert!((estimate - truth).abs() < p.error_bound(16, 0.01), "estimate {estimate} truth {truth}");
        assert!(stats.messages_per_user() >= 1.0);
        assert_eq!(stats.per_instance.len(), 5);
    }

    #[test]
    fn aggregated_round_matches_shuffled_distribution() {
        let n = 60u64;
        let p = SumParams::with_tuning(
            PrivacyBudget::new(1.0, 1e-12, 0.1).unwrap(),
            n,
            16,
            0.1,
            0.1,
            0.01,
            false,
        )
        .unwrap();
        let data: Vec<u64> = (0..n).map(|i| i % 17).collect();
        let trials = 1200u64;
        let mut full: Vec<f64> = (0..trials)
            .map(|t| run_shuffled(&data, &p, &StreamSeed::new(4).child(t)).unwrap().0)
            .collect();
        let mut agg: Vec<f64> = (0..trials)
            .map(|t| run_aggregated(&data, &p, &StreamSeed::new(5).child(t)).unwrap().0)
            .collect();
        full.sort_by(f64::total_cmp);
        agg.sort_by(f64::total_cmp);
        let mut worst = 0.0f64;
        let (mut i, mut j) = (0usize, 0usize);
        while i < full.len() && j < agg.len() {
            if full[i] <= agg[j] {
                i += 1;
            } else {
                j += 1;
            }
            worst = worst.max((i as f64 - j as f64).abs() / trials as f64);
        }
        assert!(worst < 0.08, "ks {worst}");
    }
}
