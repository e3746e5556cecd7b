//! Seed derivation. Every random stream in an experiment is a ChaCha8
//! generator keyed by a 64-bit seed derived from the episode seed and a list
//! of tags, so streams for different purposes never overlap and results are
//! reproducible byte for byte.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Instance = 1,
    Environment = 2,
    Perturbation = 3,
    Exploration = 4,
    Verification = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a, used to turn names (e.g. policy identifiers) into tags.
pub fn tag(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(base: u64, tags: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

/// Stream shared by every policy run on the same episode seed.
pub fn shared_stream(seed: u64, purpose: Purpose) -> Stream {
    stream(seed, &[purpose as u64])
}

/// Stream private to one policy on one episode seed.
pub fn policy_stream(seed: u64, policy: &str, purpose: Purpose) -> Stream {
    stream(seed, &[tag(policy), purpose as u64])
}
