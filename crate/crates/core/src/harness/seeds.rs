//! One 64-bit seed fanned out to independent streams.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream ids per experiment; fixed so that adding an experiment never shifts another's seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    MapCheck = 1,
    Cones = 2,
    Conjugacy = 3,
    Holder = 4,
    Beak = 5,
    Shadow = 6,
    Fisher = 7,
    Probes = 8,
}

/// Counter-based splitter: stream `s` of the base seed is a ChaCha8 keystream, so derived
/// seeds are independent of evaluation order.
#[derive(Debug, Clone, Copy)]
pub struct SeedSplitter {
    base: u64,
}

impl SeedSplitter {
    pub fn new(base: u64) -> Self {
        SeedSplitter { base }
    }

    pub fn rng(&self, stream: Stream) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.base);
        rng.set_stream(stream as u64);
        rng
    }

    pub fn seed(&self, stream: Stream) -> u64 {
        self.rng(stream).next_u64()
    }
}
