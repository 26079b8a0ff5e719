// SPDX-License-Identifier: Apache-2.0

//! Deterministic random streams.
//!
//! Every source of randomness in the library is derived from a master seed
//! plus a path of integer stream ids. Identical (master seed, path) pairs
//! always produce identical draws, regardless of what other streams were
//! consumed in between; distinct paths are computationally independent.
//! This is what makes simulated rounds and whole experiments replayable.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// A replayable random stream identified by a master seed and a path of
/// stream ids. Child streams extend the path; `rng()` instantiates the
/// generator for the current path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamSeed {
    master: u64,
    path: Vec<u64>,
}

impl StreamSeed {
    pub fn new(master: u64) -> Self {
        StreamSeed { master, path: Vec::new() }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Derives the child stream obtained by appending `id` to the path.
    pub fn child(&self, id: u64) -> Self {
        let mut path = Vec::with_capacity(self.path.len() + 1);
        path.extend_from_slice(&self.path);
        path.push(id);
        StreamSeed { master: self.master, path }
    }

    /// Instantiates the generator for this stream. The 256-bit state is a
    /// hash of the master seed and the full path, so sibling and ancestor
    /// streams never share state.
    pub fn rng(&self) -> ChaCha12Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.master.to_le_bytes());
        hasher.update((self.path.len() as u64).to_le_bytes());
        for id in &self.path {
            hasher.update(id.to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha12Rng::from_seed(seed)
    }
}
