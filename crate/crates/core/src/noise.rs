// SPDX-License-Identifier: Apache-2.0

//! Discrete Laplace noise, its per-user divisible shares, and the zero-sum
//! flooding traffic that pads message counts.
//!
//! The discrete Laplace distribution with scale s has pmf
//! (1 - e^(-1/s)) / (1 + e^(-1/s)) * e^(-|k|/s) over the integers. It is the
//! difference of two iid geometric variables, and each geometric is a
//! negative binomial with shape 1, which splits into n independent shape-1/n
//! components. One share per user therefore sums, across any number of
//! users, to a draw from the exact target distribution; no coordination
//! round is needed.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};

/// Scale parameter of a discrete Laplace distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscreteLaplace {
    scale: f64,
}

impl DiscreteLaplace {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::invalid(format!("discrete Laplace scale must be positive and finite, got {scale}")));
        }
        Ok(DiscreteLaplace { scale })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// e^(-1/scale), the geometric ratio of the pmf.
    fn ratio(&self) -> f64 {
        (-1.0 / self.scale).exp()
    }

    pub fn variance(&self) -> f64 {
        let q = self.ratio();
        2.0 * q / ((1.0 - q) * (1.0 - q))
    }

    /// P(X <= k), evaluated in closed form.
    pub fn cdf(&self, k: i64) -> f64 {
        let q = self.ratio();
        if k >= 0 {
            1.0 - q.powi(k as i32 + 1) / (1.0 + q)
        } else {
            q.powi(-k as i32) / (1.0 + q)
        }
    }

    /// Draws one value as the difference of two geometric variables, each
    /// sampled as the floor of an exponential with mean `scale`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let g1 = sample_geometric(self.scale, rng);
        let g2 = sample_geometric(self.scale, rng);
        g1 - g2
    }
}

/// Geometric on {0, 1, ...} with P(k) = (1 - q) q^k for q = e^(-1/scale).
fn sample_geometric<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> i64 {
    // 1 - gen() lies in (0, 1], so the log is finite and non-positive.
    let u: f64 = 1.0 - rng.gen::<f64>();
    (-scale * u.ln()).floor() as i64
}

/// Parameters for one user's additive share of a discrete Laplace draw split
/// across `participants` users, encoded as messages bounded by `domain_bound`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseShareSpec {
    pub participants: u64,
    pub noise: DiscreteLaplace,
    pub domain_bound: u64,
}

impl NoiseShareSpec {
    pub fn new(participants: u64, scale: f64, domain_bound: u64) -> Result<Self> {
        if participants == 0 {
            return Err(Error::invalid("share must have at least one participant"));
        }
        if domain_bound == 0 {
            return Err(Error::invalid("message domain bound must be at least 1"));
        }
        Ok(NoiseShareSpec { participants, noise: DiscreteLaplace::new(scale)?, domain_bound })
    }

    /// Draws one user's share: the difference of two negative binomial
    /// variables with shape 1/participants and ratio e^(-1/scale), each
    /// realized as a Poisson draw with Gamma(1/participants, q/(1-q))
    /// distributed mean. Summing one share per participant reproduces the
    /// full discrete Laplace draw exactly.
    pub fn sample_share<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let theta = self.gamma_scale();
        if theta <= 0.0 {
            return 0;
        }
        let shape = 1.0 / self.participants as f64;
        let gamma = Gamma::new(shape, theta).expect("validated parameters");
        let n1 = poisson_of(gamma.sample(rng), rng);
        let n2 = poisson_of(gamma.sample(rng), rng);
        n1 - n2
    }

    /// q / (1 - q) computed via expm1 so large scales do not lose precision.
    fn gamma_scale(&self) -> f64 {
        let s = self.noise.scale();
        let one_minus_q = -(-1.0 / s).exp_m1();
        (-1.0 / s).exp() / one_minus_q
    }

    /// Expected number of messages a share encodes to, slightly overcounted:
    /// each of the two components is nonzero with probability
    /// 1 - (1-q)^(1/n), and overflow chunks add E|share| / domain_bound.
    pub fn expected_messages(&self) -> f64 {
        let s = self.noise.scale();
        let one_minus_q = -(-1.0 / s).exp_m1();
        let n = self.participants as f64;
        let p_nonzero = -(one_minus_q.ln() / n).exp_m1();
        let mean_abs = 2.0 * self.gamma_scale() / n;
        2.0 * p_nonzero + mean_abs / self.domain_bound as f64
    }
}

fn poisson_of<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> i64 {
    if mean <= 0.0 {
        return 0;
    }
    // Below this mean the probability of two or more events (mean^2 / 2) is
    // under f64 resolution, so one Bernoulli trial samples the distribution
    // exactly. It also sidesteps the library sampler, whose inversion loop
    // returns -1 once e^(-mean) rounds to 1.
    if mean < 1e-8 {
        return i64::from(rng.gen::<f64>() < mean);
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as i64
}

/// Splits `share` into the fewest messages with magnitudes in
/// [1, domain_bound] that sum back to it exactly. Zero encodes to nothing.
pub fn encode_share_as_messages(share: i64, domain_bound: u64) -> Vec<i64> {
    assert!(domain_bound >= 1, "domain bound must be at least 1");
    let bound = domain_bound as i64;
    let sign = share.signum();
    let mut rest = share.abs();
    let mut out = Vec::with_capacity((rest / bound + 1) as usize);
    while rest > 0 {
        let chunk = rest.min(bound);
        out.push(sign * chunk);
        rest -= chunk;
    }
    out
}

/// Per-user expected number of flooding pairs for a summation instance with
/// message bound `domain_bound` run by `n` users at privacy (epsilon, delta):
///
///   rate = flood_constant * domain_bound * ln(n)^2 * ln(1/delta) / (epsilon * n)
///
/// Each pair contributes two messages that cancel in every payload sum, so
/// flooding changes traffic statistics but never an estimate.
pub fn flooding_rate(domain_bound: u64, n: u64, epsilon: f64, delta: f64, flood_constant: f64) -> f64 {
    let ln_n = (n as f64).ln();
    flood_constant * domain_bound as f64 * ln_n * ln_n * (1.0 / delta).ln() / (epsilon * n as f64)
}

/// Draws Poisson(rate) pairs (+j, -j) with j uniform on [1, domain_bound].
pub fn sample_flooding_pairs<R: Rng + ?Sized>(rate: f64, domain_bound: u64, rng: &mut R) -> Vec<i64> {
    assert!(domain_bound >= 1, "domain bound must be at least 1");
    if rate <= 0.0 {
        return Vec::new();
    }
    let pairs = poisson_of(rate, rng) as u64;
    let mut out = Vec::with_capacity(2 * pairs as usize);
    for _ in 0..pairs {
        let j = rng.gen_range(1..=domain_bound) as i64;
        out.push(j);
        out.push(-j);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamSeed;
    use proptest::prelude::*;

    #[test]
    fn tiny_scale_is_silent() {
        let d = DiscreteLaplace::new(0.01).unwrap();
        let mut rng = StreamSeed::new(11).child(0).rng();
        assert!((0..10_000).all(|_| d.sample(&mut rng) == 0));
    }

    #[test]
    fn sample_mean_is_centered() {
        let d = DiscreteLaplace::new(5.0).unwrap();
        let mut rng = StreamSeed::new(12).child(0).rng();
        let sum: i64 = (0..1_000_000).map(|_| d.sample(&mut rng)).sum();
        let mean = sum as f64 / 1e6;
        assert!(mean.abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn sample_variance_matches_closed_form() {
        let d = DiscreteLaplace::new(5.0).unwrap();
        assert!((d.variance() - 49.833666138305894).abs() < 1e-9);
        let mut rng = StreamSeed::new(13).child(0).rng();
        let draws: Vec<i64> = (0..1_000_000).map(|_| d.sample(&mut rng)).collect();
        let mean = draws.iter().sum::<i64>() as f64 / draws.len() as f64;
        let var = draws.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        let rel = (var - d.variance()).abs() / d.variance();
        assert!(rel < 0.03, "variance {var}, expected {}", d.variance());
    }

    #[test]
    fn cdf_closed_form_values() {
        let d = DiscreteLaplace::new(5.0).unwrap();
        assert!((d.cdf(0) - 0.549833997312478).abs() < 1e-12);
        assert!((d.cdf(-1) - 0.4501660026875221).abs() < 1e-12);
        assert!((d.cdf(3) - 0.7529436595511532).abs() < 1e-12);
        // Symmetry: F(-k-1) = 1 - F(k).
        for k in 0..40 {
            assert!((d.cdf(-k - 1) - (1.0 - d.cdf(k))).abs() < 1e-12);
        }
    }

    #[test]
    fn single_participant_share_matches_full_draw() {
        // With one participant the share is the whole draw; compare the
        // empirical CDF against the closed form.
        let spec = NoiseShareSpec::new(1, 5.0, 8).unwrap();
        let mut rng = StreamSeed::new(14).child(0).rng();
        let mut draws: Vec<i64> = (0..100_000).map(|_| spec.sample_share(&mut rng)).collect();
        draws.sort_unstable();
        let d = DiscreteLaplace::new(5.0).unwrap();
        let ks = ks_distance(&draws, |k| d.cdf(k));
        assert!(ks < 0.01, "ks {ks}");
    }

    #[test]
    fn share_sum_variance_matches_target() {
        let spec = NoiseShareSpec::new(100, 5.0, 8).unwrap();
        let mut rng = StreamSeed::new(15).child(0).rng();
        let trials = 100_000;
        let sums: Vec<i64> = (0..trials)
            .map(|_| (0..100).map(|_| spec.sample_share(&mut rng)).sum::<i64>())
            .collect();
        let mean = sums.iter().sum::<i64>() as f64 / trials as f64;
        let var = sums.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / trials as f64;
        let target = DiscreteLaplace::new(5.0).unwrap().variance();
        assert!((var - target).abs() / target < 0.05, "var {var}, target {target}");
    }

    #[test]
    fn tiny_poisson_means_never_go_negative() {
        // Gamma(1/n) mixing produces means like 1e-120; the count must be 0
        // (or very rarely 1), never -1.
        let mut rng = StreamSeed::new(99).child(0).rng();
        for _ in 0..10_000 {
            assert_eq!(poisson_of(1e-120, &mut rng), 0);
        }
        let hits: i64 = (0..100_000).map(|_| poisson_of(1e-9, &mut rng)).sum();
        assert!((0..=3).contains(&hits), "about 1e-4 events expected, got {hits}");
    }

    #[test]
    fn share_mean_is_centered() {
        let spec = NoiseShareSpec::new(10, 5.0, 8).unwrap();
        let mut rng = StreamSeed::new(16).child(0).rng();
        let sum: i64 = (0..1_000_000).map(|_| spec.sample_share(&mut rng)).sum();
        let mean = sum as f64 / 1e6;
        assert!(mean.abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn encode_examples() {
        assert!(encode_share_as_messages(0, 8).is_empty());
        assert_eq!(encode_share_as_messages(5, 8), vec![5]);
        assert_eq!(encode_share_as_messages(-11, 8), vec![-8, -3]);
        assert_eq!(encode_share_as_messages(16, 8), vec![8, 8]);
    }

    proptest! {
        #[test]
        fn encode_round_trips(share in -1_000_000i64..1_000_000, bound in prop::sample::select(vec![1u64, 3, 8, 1000])) {
            let msgs = encode_share_as_messages(share, bound);
            prop_assert_eq!(msgs.iter().sum::<i64>(), share);
            prop_assert!(msgs.iter().all(|&p| p != 0 && p.unsigned_abs() <= bound));
            let expect = (share.unsigned_abs() + bound - 1) / bound;
            prop_assert_eq!(msgs.len() as u64, expect);
        }

        #[test]
        fn flooding_always_cancels(rate in 0.0f64..20.0, bound in 1u64..100, seed in 0u64..1000) {
            let mut rng = StreamSeed::new(seed).child(9).rng();
            let msgs = sample_flooding_pairs(rate, bound, &mut rng);
            prop_assert_eq!(msgs.iter().sum::<i64>(), 0);
            prop_assert_eq!(msgs.len() % 2, 0);
            prop_assert!(msgs.iter().all(|&p| p != 0 && p.unsigned_abs() <= bound));
        }
    }

    #[test]
    fn flooding_zero_rate_is_empty() {
        let mut rng = StreamSeed::new(17).child(0).rng();
        assert!(sample_flooding_pairs(0.0, 10, &mut rng).is_empty());
    }

    #[test]
    fn flooding_mean_message_count() {
        let mut rng = StreamSeed::new(18).child(0).rng();
        let total: usize = (0..100_000).map(|_| sample_flooding_pairs(3.0, 10, &mut rng).len()).sum();
        let mean = total as f64 / 100_000.0;
        assert!((mean - 6.0).abs() < 0.12, "mean {mean}");
    }

    #[test]
    fn flooding_rate_formula() {
        let r = flooding_rate(1000, 100_000, 1.0, 1e-12, 1.0);
        assert!((r - 36.62421466128257).abs() < 1e-9);
        // Halving epsilon doubles the rate; doubling the constant doubles it.
        assert!((flooding_rate(1000, 100_000, 0.5, 1e-12, 1.0) - 2.0 * r).abs() < 1e-9);
        assert!((flooding_rate(1000, 100_000, 1.0, 1e-12, 2.0) - 2.0 * r).abs() < 1e-9);
        // The per-user rate vanishes as the population grows.
        assert!(flooding_rate(1000, 100_000_000, 1.0, 1e-12, 1.0) < r / 100.0);
    }

    #[test]
    fn expected_share_messages_is_small_for_large_populations() {
        let spec = NoiseShareSpec::new(100_000, 1111.0, 1000).unwrap();
        let e = spec.expected_messages();
        assert!(e > 0.0 && e < 1e-3, "expected {e}");
    }

    fn ks_distance(sorted: &[i64], cdf: impl Fn(i64) -> f64) -> f64 {
        let n = sorted.len() as f64;
        let lo = *sorted.first().unwrap();
        let hi = *sorted.last().unwrap();
        let mut worst = 0.0f64;
        let mut idx = 0usize;
        for k in lo..=hi {
            while idx < sorted.len() && sorted[idx] <= k {
                idx += 1;
            }
            let emp = idx as f64 / n;
            let diff = (emp - cdf(k)).abs();
            worst = worst.max(diff);
        }
        worst
    }
}
