//! Named, independent random streams derived from one experiment seed.
//!
//! Every consumer (shuffling, masking, sampling, initialization) asks for its
//! own stream by name, so adding draws in one place never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, name: &str) -> StreamRng {
        self.substream(name, 0)
    }

    /// Stream `index` of the family `name`, e.g. one per rollout.
    pub fn substream(&self, name: &str, index: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(name.as_bytes()) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        rng
    }

    /// Child family, for handing a whole namespace to a subsystem.
    pub fn split(&self, name: &str) -> RngStreams {
        RngStreams {
            seed: self.seed ^ fnv1a(name.as_bytes()).rotate_left(17),
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
