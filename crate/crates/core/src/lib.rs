// SPDX-License-Identifier: Apache-2.0

//! One-round differentially private summation in the shuffle model, with
//! data-dependent error: estimates degrade with the largest value actually
//! present in the data rather than with the domain bound.
//!
//! The crate provides:
//!
//! * [`base_sum`]: a bounded-sum building block with divisible
//!   discrete-Laplace noise and randomized rounding;
//! * [`sum_dp`]: scalar summation that privately selects a clipping
//!   threshold by running one base instance per geometric sub-domain;
//! * [`high_dim`]: vector summation under an l2 bound, flattening
//!   coordinates with a randomized Hadamard rotation before summing each
//!   dimension;
//! * [`sparse_vec`]: binary-vector aggregation that partitions users by
//!   sparsity so noise scales with the actual l1 mass;
//! * [`baselines`]: central-model references and exact oracles;
//! * [`bench`]: dataset generators, experiment orchestration, and report
//!   serialization behind the `shuffledp` command-line binary.
//!
//! Everything is deterministic given a master seed; see [`rng::StreamSeed`].

pub mod base_sum;
pub mod baselines;
pub mod bench;
pub mod budget;
pub mod error;
pub mod high_dim;
pub mod noise;
pub mod rng;
pub mod shuffle;
pub mod sparse_vec;
pub mod sum_dp;

pub use budget::PrivacyBudget;
pub use error::{Error, Result};
pub use rng::StreamSeed;
