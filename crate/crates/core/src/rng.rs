//! Deterministic random stream derivation.
//!
//! Every random decision in the toolkit (splits, operator draws, weight
//! init, shuffles, dropout masks, QF draws) comes from a stream derived
//! from the run seed plus a purpose tag and indices. Streams are
//! independent of evaluation order, so the same seed reproduces the same
//! run byte for byte no matter how work is batched.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for derived streams. Each tag owns a disjoint stream family.
#[derive(Clone, Copy, Debug)]
pub enum StreamId {
    Split,
    OperatorDraw,
    PatchSubsample,
    WeightInit,
    EpochShuffle,
    Dropout,
    QualityFactor,
    Synth,
}

impl StreamId {
    fn tag(self) -> u64 {
        match self {
            StreamId::Split => 1,
            StreamId::OperatorDraw => 2,
            StreamId::PatchSubsample => 3,
            StreamId::WeightInit => 4,
            StreamId::EpochShuffle => 5,
            StreamId::Dropout => 6,
            StreamId::QualityFactor => 7,
            StreamId::Synth => 8,
        }
    }
}

/// SplitMix64 step; used to mix seed material, not as a user-facing RNG.
#[inline]
pub fn splitmix64(state: &mut u64) {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash an arbitrary index list into 64 bits, order-sensitive.
pub fn hash_indices(seed: u64, tag: u64, indices: &[u64]) -> u64 {
    let mut state = seed;
    splitmix64(&mut state);
    let mut acc = mix(state ^ tag.wrapping_mul(0xd6e8_feb8_6659_fd93));
    for &ix in indices {
        splitmix64(&mut state);
        acc = mix(acc ^ mix(state ^ ix));
    }
    acc
}

/// Derive a child seed from `(seed, id, indices)`; used where a bare `u64`
/// seed travels further (for example per-step dropout seeds).
pub fn derive_seed(seed: u64, id: StreamId, indices: &[u64]) -> u64 {
    hash_indices(seed, id.tag(), indices)
}

/// Derive an independent ChaCha8 stream from `(seed, id, indices)`.
pub fn stream(seed: u64, id: StreamId, indices: &[u64]) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut word = hash_indices(seed, id.tag(), indices);
    for chunk in key.chunks_exact_mut(8) {
        word = mix(word.wrapping_add(0x9e37_79b9_7f4a_7c15));
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible() {
        let mut a = stream(7, StreamId::Dropout, &[3, 1]);
        let mut b = stream(7, StreamId::Dropout, &[3, 1]);
        for _ in 0..16 {
            assert_eq!(a.gen::<u64>(), b.gen::<u64>());
        }
    }

    #[test]
    fn streams_differ_by_tag_and_index() {
        let mut a = stream(7, StreamId::Dropout, &[1]);
        let mut b = stream(7, StreamId::QualityFactor, &[1]);
        let mut c = stream(7, StreamId::Dropout, &[2]);
        let x: u64 = a.gen();
        assert_ne!(x, b.gen());
        let mut c0 = c.gen::<u64>();
        // Not a proof of independence, just a regression trip-wire.
        assert_ne!(x, c0);
        c0 ^= 0;
        let _ = c0;
    }

    #[test]
    fn index_order_matters() {
        assert_ne!(
            hash_indices(1, 2, &[3, 4]),
            hash_indices(1, 2, &[4, 3]),
        );
    }
}
