//! Deterministic derivation of named random sub-streams from one master seed.
//!
//! Every source of randomness in the crate (orbit-search initial conditions,
//! snippet sampling, library permutations, per-seed chaotic trajectories)
//! draws from `substream(master, name)` so components are independently
//! reproducible. The derivation uses FNV-1a + splitmix64 rather than the
//! standard library hasher, whose output is not stable across releases.

use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// RNG for the named sub-stream of a master seed.
pub fn substream(master: u64, name: &str) -> ChaCha12Rng {
    let mut s = master ^ fnv1a(name.as_bytes());
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}
