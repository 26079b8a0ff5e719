// SPDX-License-Identifier: Apache-2.0

//! High-dimensional summation with L2 error via randomized rotation.
//!
//! Summing each coordinate independently would force every dimension to pay
//! for the worst coordinate bound. Instead each user multiplies their vector
//! by W = H*P, where H is the unnormalized Hadamard matrix (entries +-1,
//! H*H = d*I) and P is a diagonal of random signs shared through public
//! randomness. The rotation keeps integer vectors integer, scales the L2
//! norm by exactly sqrt(d), and spreads each vector's mass so that every
//! rotated coordinate is small with high probability. Each rotated
//! coordinate, split into its positive and negative parts, then runs the
//! scalar threshold-selection protocol under an advanced-composition budget,
//! and the analyzer rotates the per-coordinate estimates back.

use crate::budget::PrivacyBudget;
use crate::error::{Error, Result};
use crate::rng::StreamSeed;
use crate::shuffle::{self, CommStats, InstanceLayout, InstanceTag, MessageBag, ProtocolKind, Sign, Traffic};
use crate::sum_dp::SumParams;
use rand::Rng;
use std::collections::BTreeMap;

/// Child-stream id reserved for the shared rotation; per-user streams use
/// small ids and the shuffler uses u64::MAX.
const ROTATION_STREAM: u64 = u64::MAX - 1;

/// Public-randomness rotation W = H*P shared by randomizers and analyzer.
#[derive(Clone, Debug)]
pub struct RotationDescriptor {
    /// Padded dimension, a power of two.
    pub dim: u32,
    /// Diagonal of P: +-1 per coordinate.
    pub signs: Vec<i8>,
    /// Seed the signs were drawn from.
    pub seed: StreamSeed,
}

/// Draws the diagonal signs for dimension `next_power_of_two(dim_raw)`.
pub fn build_rotation(dim_raw: u32, seed: &StreamSeed) -> RotationDescriptor {
    let dim = dim_raw.max(1).next_power_of_two();
    let mut rng = seed.rng();
    let signs = (0..dim).map(|_| if rng.gen::<bool>() { 1i8 } else { -1 }).collect();
    RotationDescriptor { dim, signs, seed: seed.clone() }
}

fn fwht_i64(v: &mut [i64]) {
    let mut h = 1;
    while h < v.len() {
        for block in v.chunks_mut(2 * h) {
            for i in 0..h {
                let (a, b) = (block[i], block[i + h]);
                block[i] = a + b;
                block[i + h] = a - b;
            }
        }
        h *= 2;
    }
}

fn fwht_f64(v: &mut [f64]) {
    let mut h = 1;
    while h < v.len() {
        for block in v.chunks_mut(2 * h) {
            for i in 0..h {
                let (a, b) = (block[i], block[i + h]);
                block[i] = a + b;
                block[i + h] = a - b;
            }
        }
        h *= 2;
    }
}

/// H*(P*x) for an integer vector, zero-padded to the descriptor dimension.
/// Exact in integer arithmetic; the squared L2 norm scales by exactly d.
pub fn apply_rotation(desc: &RotationDescriptor, x: &[i64]) -> Vec<i64> {
    debug_assert!(x.len() <= desc.dim as usize);
    let mut v = vec![0i64; desc.dim as usize];
    for (i, &xi) in x.iter().enumerate() {
        v[i] = xi * desc.signs[i] as i64;
    }
    fwht_i64(&mut v);
    v
}

/// Real-valued variant of [`apply_rotation`].
pub fn apply_rotation_f64(desc: &RotationDescriptor, x: &[f64]) -> Vec<f64> {
    debug_assert!(x.len() <= desc.dim as usize);
    let mut v = vec![0f64; desc.dim as usize];
    for (i, &xi) in x.iter().enumerate() {
        v[i] = xi * desc.signs[i] as f64;
    }
    fwht_f64(&mut v);
    v
}

/// (1/d)*P*H*y, the exact inverse of [`apply_rotation`].
pub fn invert_rotation(desc: &RotationDescriptor, y: &[f64]) -> Vec<f64> {
    debug_assert_eq!(y.len(), desc.dim as usize);
    let mut v = y.to_vec();
    fwht_f64(&mut v);
    let d = desc.dim as f64;
    for (vi, &s) in v.iter_mut().zip(&desc.signs) {
        *vi *= s as f64 / d;
    }
    v
}

/// Splits a rotated vector into clipped non-negative positive and negative
/// parts: at most one of the pair is nonzero per coordinate, and
/// plus - minus reconstructs y wherever |y[k]| <= clip.
pub fn split_pos_neg(y: &[i64], clip: u64) -> (Vec<u64>, Vec<u64>) {
    let c = clip as i64;
    let plus = y.iter().map(|&v| v.clamp(0, c) as u64).collect();
    let minus = y.iter().map(|&v| (-v).clamp(0, c) as u64).collect();
    (plus, minus)
}

/// Parameters of one high-dimensional round.
#[derive(Clone, Copy, Debug)]
pub struct HighDimParams {
    pub budget: PrivacyBudget,
    pub n: u64,
    /// Dimension of the input vectors.
    pub dim_raw: u32,
    /// Power-of-two padded dimension; all derived bounds use this.
    pub dim: u32,
    /// L2 norm bound on each user's vector.
    pub l2_bound: u64,
    /// Per-coordinate clip after rotation:
    /// ceil(l2_bound * sqrt(2 ln(8 n d / beta))).
    pub clip: u64,
    pub lambda: f64,
    pub zeta: f64,
    pub flood_constant: f64,
    pub noiseless: bool,
}

impl HighDimParams {
    pub fn new(budget: PrivacyBudget, n: u64, dim_raw: u32, l2_bound: u64) -> Result<Self> {
        Self::with_tuning(budget, n, dim_raw, l2_bound, crate::base_sum::DEFAULT_LAMBDA, crate::base_sum::default_zeta(budget.epsilon), 1.0, false)
    }

    pub fn with_tuning(
        budget: PrivacyBudget,
        n: u64,
        dim_raw: u32,
        l2_bound: u64,
        lambda: f64,
        zeta: f64,
        flood_constant: f64,
        noiseless: bool,
    ) -> Result<Self> {
        if dim_raw == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if l2_bound == 0 {
            return Err(Error::invalid("l2 bound must be at least 1"));
        }
        if n == 0 {
            return Err(Error::invalid("population size n must be at least 1"));
        }
        let dim = dim_raw.next_power_of_two();
        let clip = (l2_bound as f64
            * (2.0 * (8.0 * n as f64 * dim as f64 / budget.beta).ln()).sqrt())
        .ceil() as u64;
        let params = HighDimParams {
            budget,
            n,
            dim_raw,
            dim,
            l2_bound,
            clip,
            lambda,
            zeta,
            flood_constant,
            noiseless,
        };
        params.assert_composition()?;
        Ok(params)
    }

    /// Per-coordinate step epsilon: eps / (4 sqrt(d ln(2/delta))).
    pub fn inner_epsilon(&self) -> f64 {
        self.budget.epsilon / (4.0 * (self.dim as f64 * (2.0 / self.budget.delta).ln()).sqrt())
    }

    /// Per-coordinate step delta: delta / (4d).
    pub fn inner_delta(&self) -> f64 {
        self.budget.delta / (4.0 * self.dim as f64)
    }

    /// Budget of one (coordinate, sign) scalar instance; failure probability
    /// splits evenly across the 2d instances.
    pub fn inner_budget(&self) -> PrivacyBudget {
        PrivacyBudget::new(
            self.inner_epsilon(),
            self.inner_delta(),
            self.budget.beta / (2.0 * self.dim as f64),
        )
        .expect("derived budget is valid")
    }

    /// The scalar instance serving one rotated coordinate and sign.
    pub fn inner_params(&self, k: u32, sign: Sign) -> SumParams {
        self.inner_template().embedded(ProtocolKind::HighDim, k, sign)
    }

    fn inner_template(&self) -> SumParams {
        SumParams::with_tuning(
            self.inner_budget(),
            self.n,
            self.clip,
            self.lambda,
            self.zeta,
            self.flood_constant,
            self.noiseless,
        )
        .expect("derived parameters are valid")
    }

    /// The 2d (coordinate, sign) instances run adaptively, so their budgets
    /// must recompose within the configured total.
    pub fn assert_composition(&self) -> Result<()> {
        let steps = 2 * self.dim;
        let total = crate::budget::advanced_composition(
            self.inner_epsilon(),
            self.inner_delta(),
            steps,
            self.budget.delta / 2.0,
        )?;
        if !total.within(&self.budget) {
            return Err(Error::invalid(format!(
                "per-coordinate budgets compose to ({}, {}) exceeding ({}, {})",
                total.epsilon, total.delta, self.budget.epsilon, self.budget.delta
            )));
        }
        Ok(())
    }

    pub fn declare(&self, layout: &mut InstanceLayout) {
        for k in 0..self.dim {
            self.inner_params(k, Sign::Plus).declare(layout);
            self.inner_params(k, Sign::Minus).declare(layout);
        }
    }

    fn validate(&self, data: &[Vec<u64>]) -> Result<()> {
        if data.is_empty() {
            return Err(Error::dataset("dataset must contain at least one user"));
        }
        let bound = (self.l2_bound as u128).pow(2);
        for (i, x) in data.iter().enumerate() {
            if x.len() != self.dim_raw as usize {
                return Err(Error::dataset(format!(
                    "user {i}: vector length {} but dimension is {}",
                    x.len(),
                    self.dim_raw
                )));
            }
            let norm2: u128 = x.iter().map(|&v| (v as u128) * (v as u128)).sum();
            if norm2 > bound {
                return Err(Error::dataset(format!(
                    "user {i}: squared norm {norm2} exceeds bound {bound}"
                )));
            }
        }
        Ok(())
    }
}

/// One user's messages: rotate, clip-split, and feed every (coordinate,
/// sign) scalar instance. Rejects vectors whose L2 norm exceeds the bound.
pub fn randomize_highdim<R: Rng + ?Sized>(
    x: &[u64],
    params: &HighDimParams,
    desc: &RotationDescriptor,
    rng: &mut R,
) -> MessageBag {
    let ints: Vec<i64> = x.iter().map(|&v| v as i64).collect();
    let y = apply_rotation(desc, &ints);
    let (plus, minus) = split_pos_neg(&y, params.clip);
    let mut bag = MessageBag::new();
    for k in 0..params.dim {
        bag.extend(params.inner_params(k, Sign::Plus).randomize(plus[k as usize], rng));
        bag.extend(params.inner_params(k, Sign::Minus).randomize(minus[k as usize], rng));
    }
    bag
}

/// Per-coordinate positive minus negative estimates, rotated back and
/// truncated to the raw dimension.
pub fn analyze_highdim(
    sums: &BTreeMap<InstanceTag, i128>,
    params: &HighDimParams,
    desc: &RotationDescriptor,
) -> Result<Vec<f64>> {
    let mut z = Vec::with_capacity(params.dim as usize);
    for k in 0..params.dim {
        let (plus, _) = params.inner_params(k, Sign::Plus).analyze(sums)?;
        let (minus, _) = params.inner_params(k, Sign::Minus).analyze(sums)?;
        z.push(plus - minus);
    }
    let estimate = invert_rotation(desc, &z);
    Ok(estimate[..params.dim_raw as usize].to_vec())
}

/// Full message-level round.
pub fn run_shuffled(
    data: &[Vec<u64>],
    params: &HighDimParams,
    seed: &StreamSeed,
) -> Result<(Vec<f64>, CommStats)> {
    params.validate(data)?;
    let desc = build_rotation(params.dim_raw, &seed.child(ROTATION_STREAM));
    let mut layout = InstanceLayout::new();
    params.declare(&mut layout);
    let (bag, stats) = shuffle::run_round(data, &layout, seed, |x: &Vec<u64>, rng| {
        randomize_highdim(x, params, &desc, rng)
    })?;
    let mut sums = shuffle::sums_by_tag(&bag);
    for (tag, _) in layout.instances() {
        sums.entry(*tag).or_insert(0);
    }
    let estimate = analyze_highdim(&sums, params, &desc)?;
    Ok((estimate, stats))
}

/// Distribution-equivalent round without message materialization.
pub fn run_aggregated(
    data: &[Vec<u64>],
    params: &HighDimParams,
    seed: &StreamSeed,
) -> Result<(Vec<f64>, Traffic)> {
    params.validate(data)?;
    let desc = build_rotation(params.dim_raw, &seed.child(ROTATION_STREAM));
    let template = params.inner_template();
    let per_j: Vec<crate::base_sum::BaseParams> =
        (0..template.subdomains()).map(|j| template.base_params(j)).collect();
    let subdomains = per_j.len();
    // sums[(2k + sign_offset) * subdomains + j]
    let mut sums = vec![0i128; 2 * params.dim as usize * subdomains];
    let mut expected_data = 0.0f64;
    let mut data_rng = seed.child(0).rng();
    for x in data {
        let ints: Vec<i64> = x.iter().map(|&v| v as i64).collect();
        let y = apply_rotation(&desc, &ints);
        let (plus, minus) = split_pos_neg(&y, params.clip);
        for k in 0..params.dim as usize {
            for (offset, v) in [(0usize, plus[k]), (1, minus[k])] {
                if let Some(j) = SumParams::partition_index(v) {
                    let base = &per_j[j as usize];
                    sums[(2 * k + offset) * subdomains + j as usize] +=
                        base.round_value(v, &mut data_rng) as i128;
                    expected_data += base.data_message_probability(v);
                }
            }
        }
    }
    let mut noise_rng = seed.child(1).rng();
    let mut by_tag = BTreeMap::new();
    for k in 0..params.dim {
        for (offset, sign) in [(0usize, Sign::Plus), (1, Sign::Minus)] {
            let inner = params.inner_params(k, sign);
            for j in 0..subdomains {
                let mut s = sums[(2 * k as usize + offset) * subdomains + j];
                s += per_j[j].total_noise(&mut noise_rng) as i128;
                by_tag.insert(inner.tag(j as u32), s);
            }
        }
    }
    let estimate = analyze_highdim(&by_tag, params, &desc)?;
    let mut layout = InstanceLayout::new();
    params.declare(&mut layout);
    let noise_messages: f64 =
        2.0 * params.dim as f64 * per_j.iter().map(|p| p.expected_noise_messages()).sum::<f64>();
    let traffic = Traffic {
        messages_per_user: expected_data / data.len() as f64 + noise_messages,
        bits_per_message: layout.bits_per_message(),
    };
    Ok((estimate, traffic))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn identity_descriptor(dim: u32) -> RotationDescriptor {
        RotationDescriptor { dim, signs: vec![1; dim as usize], seed: StreamSeed::new(0) }
    }

    #[test]
    fn rotation_construction() {
        assert_eq!(build_rotation(1, &StreamSeed::new(1)).dim, 1);
        assert_eq!(build_rotation(3, &StreamSeed::new(1)).dim, 4);
        assert_eq!(build_rotation(64, &StreamSeed::new(1)).dim, 64);
        let a = build_rotation(64, &StreamSeed::new(7));
        let b = build_rotation(64, &StreamSeed::new(7));
        assert_eq!(a.signs, b.signs);
        let c = build_rotation(64, &StreamSeed::new(8));
        assert_ne!(a.signs, c.signs);
        assert!(a.signs.iter().all(|&s| s == 1 || s == -1));
    }

    #[test]
    fn rotation_examples() {
        let desc = identity_descriptor(2);
        assert_eq!(apply_rotation(&desc, &[0, 0]), vec![0, 0]);
        assert_eq!(apply_rotation(&desc, &[1, 0]), vec![1, 1]);
        // Hand-checked 4x4 transform.
        let desc = identity_descriptor(4);
        assert_eq!(apply_rotation(&desc, &[1, 2, 3, 4]), vec![10, -2, -4, 0]);
    }

    #[test]
    fn rotation_scales_norm_exactly() {
        let mut rng = StreamSeed::new(2).rng();
        for d in [2u32, 64, 1024] {
            let desc = build_rotation(d, &StreamSeed::new(3));
            for _ in 0..50 {
                let x: Vec<i64> = (0..d).map(|_| rng.gen_range(-1000..=1000)).collect();
                let y = apply_rotation(&desc, &x);
                let nx: i128 = x.iter().map(|&v| (v as i128) * (v as i128)).sum();
                let ny: i128 = y.iter().map(|&v| (v as i128) * (v as i128)).sum();
                assert_eq!(ny, d as i128 * nx);
            }
        }
    }

    #[test]
    fn rotation_round_trip() {
        let desc = build_rotation(128, &StreamSeed::new(4));
        let zeros = vec![0f64; 128];
        assert_eq!(invert_rotation(&desc, &zeros), zeros);
        let mut rng = StreamSeed::new(5).rng();
        for _ in 0..200 {
            let x: Vec<i64> = (0..128).map(|_| rng.gen_range(-100_000..=100_000)).collect();
            let y: Vec<f64> = apply_rotation(&desc, &x).iter().map(|&v| v as f64).collect();
            let back = invert_rotation(&desc, &y);
            let norm = (x.iter().map(|&v| (v * v) as f64).sum::<f64>()).sqrt();
            for (xi, bi) in x.iter().zip(&back) {
                assert!((*xi as f64 - bi).abs() <= 1e-9 * norm.max(1.0));
            }
        }
    }

    #[test]
    fn pos_neg_split() {
        let (p, m) = split_pos_neg(&[3, -2], 10);
        assert_eq!((p, m), (vec![3, 0], vec![0, 2]));
        let (p, m) = split_pos_neg(&[15], 10);
        assert_eq!((p, m), (vec![10], vec![0]));
        let mut rng = StreamSeed::new(6).rng();
        for _ in 0..200 {
            let y: Vec<i64> = (0..16).map(|_| rng.gen_range(-50..=50)).collect();
            let (p, m) = split_pos_neg(&y, 50);
            for k in 0..16 {
                assert!(p[k] == 0 || m[k] == 0);
                assert_eq!(p[k] as i64 - m[k] as i64, y[k]);
            }
        }
    }

    #[test]
    fn rotated_coordinates_stay_small() {
        // Over random unit-norm vectors, the rotated max coordinate exceeds
        // sqrt(2 ln(4d/beta)) with frequency at most beta.
        let d = 256u32;
        let desc = build_rotation(d, &StreamSeed::new(9));
        let threshold = (2.0 * (4.0 * d as f64 / 0.1).ln()).sqrt();
        let mut rng = StreamSeed::new(10).rng();
        let mut exceed = 0u32;
        for _ in 0..10_000 {
            let mut x: Vec<f64> = (0..d)
                .map(|_| {
                    let (u1, u2): (f64, f64) = (rng.gen(), rng.gen());
                    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                })
                .collect();
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            x.iter_mut().for_each(|v| *v /= norm);
            let y = apply_rotation_f64(&desc, &x);
            if y.iter().any(|v| v.abs() > threshold) {
                exceed += 1;
            }
        }
        assert!(exceed <= 1000, "{exceed} of 10000 exceeded the spread bound");
    }

    #[test]
    fn derived_parameters() {
        let p = HighDimParams::new(PrivacyBudget::new(1.0, 1e-8, 0.05).unwrap(), 100_000, 64, 1).unwrap();
        assert_eq!(p.clip, 7);
        let eps = p.inner_epsilon();
        assert!((eps * 4.0 * (64.0 * (2.0 / 1e-8f64).ln()).sqrt() - 1.0).abs() < 1e-12);
        assert!((p.inner_delta() - 1e-8 / 256.0).abs() < 1e-24);
        // Budgets recompose within the configured total for several presets.
        for (epsilon, dim) in [(0.2, 16u32), (1.0, 64), (5.0, 256)] {
            let p = HighDimParams::new(PrivacyBudget::new(epsilon, 1e-12, 0.1).unwrap(), 10_000, dim, 8).unwrap();
            p.assert_composition().unwrap();
        }
    }

    #[test]
    fn padding_for_odd_dimensions() {
        let p = HighDimParams::new(PrivacyBudget::new(1.0, 1e-10, 0.1).unwrap(), 1000, 3, 4).unwrap();
        assert_eq!(p.dim, 4);
        let mut p = p;
        p.noiseless = true;
        let data = vec![vec![1u64, 0, 2], vec![0, 3, 0]];
        let (estimate, _) = run_shuffled(&data, &p, &StreamSeed::new(11)).unwrap();
        assert_eq!(estimate.len(), 3);
    }

    #[test]
    fn noiseless_constant_data_is_exact() {
        // Large enough per-coordinate sums clear every bar, so the noiseless
        // pipeline is exact end to end (rotation, split, scalar instances,
        // inverse rotation).
        let n = 100usize;
        let budget = PrivacyBudget::new(20.0, 1e-8, 0.1).unwrap();
        let mut p = HighDimParams::new(budget, n as u64, 8, 16).unwrap();
        p.noiseless = true;
        let x = vec![3u64, 0, 1, 2, 0, 0, 5, 1];
        let data: Vec<Vec<u64>> = (0..n).map(|_| x.clone()).collect();
        let (est_full, _) = run_shuffled(&data, &p, &StreamSeed::new(12)).unwrap();
        let (est_agg, _) = run_aggregated(&data, &p, &StreamSeed::new(13)).unwrap();
        for k in 0..8 {
            let truth = (n as u64 * x[k]) as f64;
            assert!((est_full[k] - truth).abs() < 1e-9, "k={k}: {} vs {truth}", est_full[k]);
            assert!((est_agg[k] - truth).abs() < 1e-9);
        }
    }

    #[test]
    fn noisy_round_smoke() {
        let n = 200u64;
        let budget = PrivacyBudget::new(30.0, 1e-8, 0.1).unwrap();
        let p = HighDimParams::with_tuning(budget, n, 4, 8, 0.1, 0.01, 0.01, false).unwrap();
        let data: Vec<Vec<u64>> = (0..n).map(|i| vec![1 + i % 3, 0, 2, 1]).collect();
        let truth: Vec<f64> = (0..4)
            .map(|k| data.iter().map(|x| x[k] as f64).sum())
            .collect();
        let (estimate, traffic) = run_aggregated(&data, &p, &StreamSeed::new(14)).unwrap();
        let err2: f64 = estimate
            .iter()
            .zip(&truth)
            .map(|(e, t)| (e - t) * (e - t))
            .sum::<f64>()
            .sqrt();
        let truth_norm = truth.iter().map(|t| t * t).sum::<f64>().sqrt();
        assert!(err2 < truth_norm, "l2 error {err2} vs truth norm {truth_norm}");
        assert!(traffic.messages_per_user > 0.0);
        assert!(traffic.bits_per_message > 0);
    }

    #[test]
    fn rejects_norm_violation() {
        let p = HighDimParams::new(PrivacyBudget::new(1.0, 1e-10, 0.1).unwrap(), 10, 4, 2).unwrap();
        let data = vec![vec![2u64, 2, 2, 2]];
        assert!(matches!(run_aggregated(&data, &p, &StreamSeed::new(1)), Err(Error::Dataset(_))));
        let data = vec![vec![1u64, 1]];
        assert!(matches!(run_aggregated(&data, &p, &StreamSeed::new(1)), Err(Error::Dataset(_))));
    }

    #[test]
    fn noiseless_randomizer_examples() {
        let budget = PrivacyBudget::new(1.0, 1e-10, 0.1).unwrap();
        let mut p = HighDimParams::new(budget, 10, 2, 4).unwrap();
        p.noiseless = true;
        let desc = identity_descriptor(2);
        let mut rng = StreamSeed::new(15).rng();
        assert!(randomize_highdim(&[0, 0], &p, &desc, &mut rng).is_empty());
        // (1,0) rotates to (1,1): one positive data message per coordinate.
        let bag = randomize_highdim(&[1, 0], &p, &desc, &mut rng);
        assert_eq!(bag.len(), 2);
        let tags: Vec<_> = bag.iter().map(|m| (m.tag.dimension, m.tag.sign)).collect();
        assert_eq!(tags, vec![(0, Sign::Plus), (1, Sign::Plus)]);
        assert!(bag.iter().all(|m| m.payload == 1));
    }
}
