//! Deterministic seed streams.
//!
//! Every randomized component draws from a `ChaCha20` generator derived from a
//! base seed plus a list of tags (replicate index, purpose, worker id, ...).
//! Derivation is a splitmix64 sponge, so adding a new purpose or method never
//! perturbs the streams of existing ones.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Purpose tags for the major random sources of an experiment replicate.
pub mod purpose {
    pub const NETWORK: u64 = 0x4e45;
    pub const COVARIATES: u64 = 0x434f;
    pub const NOISE: u64 = 0x4e4f;
    pub const PARTITION: u64 = 0x5041;
    pub const PROJECTOR: u64 = 0x504a;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix `base` and `tags` into a single 64-bit stream key.
pub fn derive_key(base: u64, tags: &[u64]) -> u64 {
    let mut state = base ^ 0xA076_1D64_78BD_642F;
    let mut acc = splitmix64(&mut state);
    for &t in tags {
        state ^= t.wrapping_mul(0xE703_7ED1_A0B4_28DB);
        acc ^= splitmix64(&mut state);
    }
    acc
}

/// Deterministic generator for `(base, tags)`.
pub fn derive_rng(base: u64, tags: &[u64]) -> ChaCha20Rng {
    let key = derive_key(base, tags);
    let mut state = key;
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha20Rng::from_seed(seed)
}

/// Generator seeded directly from a single value.
pub fn seed_rng(seed: u64) -> ChaCha20Rng {
    derive_rng(seed, &[])
}
