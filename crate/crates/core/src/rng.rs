//! Seeded random streams.
//!
//! Every consumer of randomness gets its own stream, derived from the global
//! seed plus a path of labels (purpose, round, participant, epoch, ...). Two
//! streams with different paths are statistically independent, and the same
//! path always yields the same sequence, so results never depend on the order
//! in which workers happen to run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Purpose tags for top-level stream derivation.
pub mod purpose {
    pub const INIT: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const SELECT: u64 = 3;
    pub const LOCAL_TRAIN: u64 = 4;
    pub const AGGREGATE: u64 = 5;
    pub const DATA: u64 = 6;
    pub const GAINS: u64 = 7;
    pub const GRADCHECK: u64 = 8;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream(u64);

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream(splitmix(seed))
    }

    pub fn id(self) -> u64 {
        self.0
    }

    /// A child stream identified by `label`.
    pub fn derive(self, label: u64) -> Self {
        RngStream(splitmix(
            self.0 ^ splitmix(label.wrapping_add(0x9E37_79B9_7F4A_7C15)),
        ))
    }

    pub fn derive_path(self, labels: &[u64]) -> Self {
        labels.iter().fold(self, |s, &l| s.derive(l))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
