//! Seeded random streams.
//!
//! Every random quantity in a run is drawn from its own ChaCha stream, keyed by
//! the master seed and a short path of integers (domain, cell, realization,
//! state, ...). Streams never share state, so results do not depend on the
//! order in which tasks are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;

pub type StreamRng = ChaCha8Rng;

/// Stream domains, the first element of every seed path.
pub mod domain {
    pub const REALIZATION: u64 = 1;
    pub const STATE: u64 = 2;
    pub const WINDOW: u64 = 3;
    pub const VALIDATION: u64 = 4;
    pub const TEST: u64 = 15;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedTag {
    pub master: u64,
    pub path: [u64; 4],
}

impl SeedTag {
    pub fn new(master: u64, path: [u64; 4]) -> Self {
        Self { master, path }
    }

    /// Stream for realization `index` of parameter cell `cell`; `attempt` is
    /// bumped when a draw has to be rejected.
    pub fn realization(master: u64, cell: u64, index: u64, attempt: u64) -> Self {
        Self::new(master, [domain::REALIZATION, cell, index, attempt])
    }

    pub fn state(master: u64, cell: u64, realization: u64, state: u64) -> Self {
        Self::new(master, [domain::STATE, cell, realization, state])
    }

    pub fn seed_bytes(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.master.to_le_bytes());
        for p in self.path {
            h.update(p.to_le_bytes());
        }
        let digest = h.finalize();
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        out
    }

    pub fn rng(&self) -> StreamRng {
        ChaCha8Rng::from_seed(self.seed_bytes())
    }
}

impl fmt::Display for SeedTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.path;
        write!(f, "{}/{a}/{b}/{c}/{d}", self.master)
    }
}
