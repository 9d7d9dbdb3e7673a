//! Deterministic stream derivation.
//!
//! Every stochastic operation in this crate takes an explicit RNG. Streams
//! are derived from a single master seed and a path of integer labels, so
//! results are reproducible no matter in which order (or on how many
//! threads) the consumers run.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Splittable seed: a master seed plus a label path identifies one stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Streams {
    master: u64,
}

impl Streams {
    pub fn new(master: u64) -> Self {
        Streams { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// RNG for the stream identified by `path` under this master seed.
    pub fn stream(&self, path: &[u64]) -> ChaCha8Rng {
        let mut h = splitmix64(self.master);
        for &p in path {
            h = splitmix64(h ^ splitmix64(p));
        }
        ChaCha8Rng::seed_from_u64(h)
    }

    /// Child seed for handing a whole sub-hierarchy to another component.
    pub fn child(&self, label: u64) -> Streams {
        Streams {
            master: splitmix64(splitmix64(self.master) ^ splitmix64(label)),
        }
    }
}
