//! Deterministic RNG stream derivation.
//!
//! Every random draw in training comes from a stream keyed by
//! `(master_seed, purpose, iteration, phase, step)` with the group index
//! selecting the ChaCha stream, so results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Batch = 1,
    Latent = 2,
    Rollout = 3,
    Dataset = 4,
    Split = 5,
    Oracle = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one 64-bit seed.
pub fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x5357_4952_4c00_0001, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream for one `(iteration, phase, step)` and purpose; `group` picks the
/// ChaCha stream so per-group draws are independent of each other.
pub fn stream(
    master_seed: u64,
    purpose: Purpose,
    iteration: usize,
    phase: usize,
    step: usize,
    group: usize,
) -> ChaCha8Rng {
    let seed = mix(&[
        master_seed,
        purpose as u64,
        iteration as u64,
        phase as u64,
        step as u64,
    ]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(group as u64);
    rng
}
