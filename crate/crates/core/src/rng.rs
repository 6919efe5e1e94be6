//! Keyed random streams.
//!
//! Every stochastic decision draws from a generator seeded by a hash of
//! `(run seed, stream tag, indices...)`, so results never depend on the
//! order in which workers happen to consume randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed, a stream tag and a sequence of indices into one 64-bit key.
pub fn derive_seed(seed: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix(seed);
    for b in tag.bytes() {
        h = splitmix(h ^ b as u64);
    }
    for &i in indices {
        h = splitmix(h ^ i.wrapping_mul(0xd6e8_feb8_6659_fd93));
    }
    h
}

pub fn stream(seed: u64, tag: &str, indices: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, indices))
}
