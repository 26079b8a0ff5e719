// SPDX-License-Identifier: Apache-2.0

//! The one-round shuffle harness.
//!
//! A round runs every user's randomizer on their private value, takes the
//! multiset union of all emitted messages, and applies a uniformly random
//! permutation before the analyzer sees anything. Several protocol instances
//! can share a round; each message carries a compact tag naming the instance
//! it belongs to, and the harness enforces per-instance payload bounds so a
//! misbehaving randomizer is caught at the boundary.

use crate::error::{Error, Result};
use crate::rng::StreamSeed;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha12Rng;
use std::collections::BTreeMap;
use std::fmt;

/// Which protocol family an instance belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProtocolKind {
    Base,
    Sum,
    HighDim,
    SparseCount,
    SparseSum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sign {
    Plus,
    Minus,
    None,
}

/// Names one protocol instance within a round. `subdomain` is the geometric
/// sub-domain or sparsity bucket index (-1 when the protocol has none);
/// `dimension` distinguishes vector coordinates; `sign` separates the
/// positive and negative parts of signed data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstanceTag {
    pub protocol: ProtocolKind,
    pub subdomain: i16,
    pub dimension: u32,
    pub sign: Sign,
}

impl InstanceTag {
    pub fn scalar(protocol: ProtocolKind, subdomain: i16) -> Self {
        InstanceTag { protocol, subdomain, dimension: 0, sign: Sign::None }
    }

    pub fn dimensional(protocol: ProtocolKind, subdomain: i16, dimension: u32, sign: Sign) -> Self {
        InstanceTag { protocol, subdomain, dimension, sign }
    }
}

impl fmt::Display for InstanceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.protocol {
            ProtocolKind::Base => "base",
            ProtocolKind::Sum => "sum",
            ProtocolKind::HighDim => "highdim",
            ProtocolKind::SparseCount => "sparse_count",
            ProtocolKind::SparseSum => "sparse_sum",
        };
        write!(f, "{name}")?;
        if self.subdomain >= 0 {
            write!(f, "/j{}", self.subdomain)?;
        }
        match self.sign {
            Sign::Plus => write!(f, "/k{}+", self.dimension)?,
            Sign::Minus => write!(f, "/k{}-", self.dimension)?,
            Sign::None => {
                if self.dimension > 0 {
                    write!(f, "/k{}", self.dimension)?;
                }
            }
        }
        Ok(())
    }
}

/// One shuffled message: an instance tag plus an integer payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Message {
    pub tag: InstanceTag,
    pub payload: i64,
}

/// A multiset of messages. Order carries no information once shuffled.
pub type MessageBag = Vec<Message>;

/// The set of instances live in a round, with each instance's payload bound.
#[derive(Clone, Debug, Default)]
pub struct InstanceLayout {
    bounds: BTreeMap<InstanceTag, u64>,
}

impl InstanceLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(&mut self, tag: InstanceTag, payload_bound: u64) {
        debug_assert!(payload_bound >= 1);
        self.bounds.insert(tag, payload_bound);
    }

    pub fn bound(&self, tag: &InstanceTag) -> Option<u64> {
        self.bounds.get(tag).copied()
    }

    pub fn instances(&self) -> impl Iterator<Item = (&InstanceTag, &u64)> {
        self.bounds.iter()
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    /// Worst-case encoded size of one message: payload bits for the widest
    /// instance, ceil(log2(2 * bound + 1)) for payloads in [-bound, bound],
    /// plus ceil(log2(#instances)) tag bits.
    pub fn bits_per_message(&self) -> u32 {
        let payload_bits = self
            .bounds
            .values()
            .map(|&b| ceil_log2(2 * b + 1))
            .max()
            .unwrap_or(0);
        payload_bits + ceil_log2(self.bounds.len() as u64)
    }
}

pub fn ceil_log2(x: u64) -> u32 {
    assert!(x >= 1);
    64 - (x - 1).leading_zeros().min(64)
}

/// Traffic accounting for one simulated round.
#[derive(Clone, Debug, Default)]
pub struct CommStats {
    pub users: u64,
    pub total_messages: u64,
    pub bits_per_message: u32,
    pub per_instance: BTreeMap<InstanceTag, u64>,
}

impl CommStats {
    pub fn messages_per_user(&self) -> f64 {
        if self.users == 0 {
            0.0
        } else {
            self.total_messages as f64 / self.users as f64
        }
    }

    /// Combines stats from two rounds run by the same user population.
    pub fn merge(&mut self, other: &CommStats) {
        debug_assert_eq!(self.users, other.users);
        self.total_messages += other.total_messages;
        self.bits_per_message = self.bits_per_message.max(other.bits_per_message);
        for (tag, count) in &other.per_instance {
            *self.per_instance.entry(*tag).or_insert(0) += count;
        }
    }
}

/// Traffic summary carried into reports: average messages per user and the
/// worst-case encoded message width.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Traffic {
    pub messages_per_user: f64,
    pub bits_per_message: u32,
}

impl From<&CommStats> for Traffic {
    fn from(stats: &CommStats) -> Self {
        Traffic { messages_per_user: stats.messages_per_user(), bits_per_message: stats.bits_per_message }
    }
}

/// Runs one round: invokes the randomizer once per user with that user's
/// derived random stream, validates every message against the layout, pools
/// everything, and shuffles the pool. Identical seeds reproduce the round
/// bit for bit.
pub fn run_round<T, F>(
    dataset: &[T],
    layout: &InstanceLayout,
    seed: &StreamSeed,
    randomizer: F,
) -> Result<(MessageBag, CommStats)>
where
    F: Fn(&T, &mut ChaCha12Rng) -> MessageBag,
{
    let mut pool: MessageBag = Vec::new();
    let mut stats = CommStats {
        users: dataset.len() as u64,
        bits_per_message: layout.bits_per_message(),
        ..CommStats::default()
    };
    for (i, value) in dataset.iter().enumerate() {
        let mut rng = seed.child(i as u64).rng();
        let bag = randomizer(value, &mut rng);
        for msg in &bag {
            let bound = layout.bound(&msg.tag).ok_or_else(|| {
                Error::violation(format!("user {i} emitted a message for undeclared instance {}", msg.tag))
            })?;
            if msg.payload.unsigned_abs() > bound {
                return Err(Error::violation(format!(
                    "user {i} emitted payload {} outside [-{bound}, {bound}] for instance {}",
                    msg.payload, msg.tag
                )));
            }
            *stats.per_instance.entry(msg.tag).or_insert(0) += 1;
        }
        stats.total_messages += bag.len() as u64;
        pool.extend_from_slice(&bag);
    }
    // The shuffler gets its own reserved stream so user streams stay stable
    // regardless of population size.
    let mut shuffle_rng = seed.child(u64::MAX).rng();
    pool.shuffle(&mut shuffle_rng);
    Ok((pool, stats))
}

/// Splits a shuffled bag into per-instance payload lists.
pub fn group_by_tag(bag: &MessageBag) -> BTreeMap<InstanceTag, Vec<i64>> {
    let mut groups: BTreeMap<InstanceTag, Vec<i64>> = BTreeMap::new();
    for msg in bag {
        groups.entry(msg.tag).or_default().push(msg.payload);
    }
    groups
}

/// Per-instance payload sums of a shuffled bag.
pub fn sums_by_tag(bag: &MessageBag) -> BTreeMap<InstanceTag, i128> {
    let mut sums: BTreeMap<InstanceTag, i128> = BTreeMap::new();
    for msg in bag {
        *sums.entry(msg.tag).or_insert(0) += msg.payload as i128;
    }
    sums
}
