//! Keyed random substreams.
//!
//! Every random draw in the simulator comes from a ChaCha8 stream whose
//! 256-bit key is derived from `(experiment seed, domain, path...)` with a
//! SplitMix64 chain. Streams are therefore independent of the order in which
//! clients, samples, or rounds are visited.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tag mixed into every stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Data = 0x6461_7461,
    Shuffle = 0x7368_7566,
    Init = 0x696e_6974,
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for `(seed, domain, path)`.
pub fn substream(seed: u64, domain: Domain, path: &[u64]) -> ChaCha8Rng {
    let mut state = seed;
    let mut acc = splitmix64(&mut state) ^ domain as u64;
    for &p in path {
        state ^= acc;
        state = state.wrapping_add(p);
        acc = splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state ^= acc;
        acc = splitmix64(&mut state);
        chunk.copy_from_slice(&acc.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
