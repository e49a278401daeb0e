//! Seeded random streams.
//!
//! All randomness flows through ChaCha8 generators. Each purpose (weight
//! initialization, dropout masks, shuffling) draws from its own stream so that
//! changing how often one consumer draws never shifts another.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Algorithm identity recorded in run metadata.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.3, seed_from_u64)";

/// Named stream identifiers.
pub mod stream {
    pub const EMBEDDINGS: u64 = 1;
    pub const DROPOUT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const HEAD: u64 = 5;
    pub const HEAD_PHASE_TWO: u64 = 6;
    pub const GRADCHECK: u64 = 7;
    pub const SYNTHETIC: u64 = 8;
    /// Encoder block `k` (1-based) draws from `BLOCK_BASE + k`.
    pub const BLOCK_BASE: u64 = 100;
}

pub type Rng = ChaCha8Rng;

/// Opens stream `stream` of the generator keyed by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Serializable position of a stream, enough to resume it exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// ChaCha word position, as a decimal string (it is a u128).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(seed: u64, rng: &Rng) -> Self {
        RngState {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Option<Rng> {
        let pos: u128 = self.word_pos.parse().ok()?;
        let mut rng = stream_rng(self.seed, self.stream);
        rng.set_word_pos(pos);
        Some(rng)
    }
}

/// Uniform f64 in [0, 1) from the top 53 bits of one draw.
#[inline]
pub fn unit_f64(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform integer in `0..n` by widening multiply (n > 0).
#[inline]
pub fn below(rng: &mut Rng, n: usize) -> usize {
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

/// In-place Fisher-Yates shuffle, walking from the last element down.
pub fn shuffle<T>(items: &mut [T], rng: &mut Rng) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i + 1);
        items.swap(i, j);
    }
}

/// Deterministic permutation of `0..n` keyed by `(seed, stream, salt)`.
pub fn permutation(n: usize, seed: u64, stream: u64, salt: u64) -> Vec<usize> {
    let mut rng = stream_rng(seed, stream);
    // each salt gets its own 2^40-word window of the stream
    rng.set_word_pos((salt as u128) << 40);
    let mut idx: Vec<usize> = (0..n).collect();
    shuffle(&mut idx, &mut rng);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = stream_rng(9, stream::DROPOUT);
        let mut b = stream_rng(9, stream::DROPOUT);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_are_independent() {
        let mut a = stream_rng(9, stream::DROPOUT);
        let mut b = stream_rng(9, stream::SHUFFLE);
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn state_capture_restores_position() {
        let mut a = stream_rng(3, stream::DROPOUT);
        for _ in 0..37 {
            a.next_u32();
        }
        let state = RngState::capture(3, &a);
        let mut b = state.restore().unwrap();
        for _ in 0..50 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn permutation_is_a_permutation() {
        let p = permutation(50, 1, stream::SHUFFLE, 4);
        let mut sorted = p.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_eq!(p, permutation(50, 1, stream::SHUFFLE, 4));
        assert_ne!(p, permutation(50, 1, stream::SHUFFLE, 5));
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = stream_rng(0, 0);
        for n in 1..40 {
            for _ in 0..20 {
                assert!(below(&mut rng, n) < n);
            }
        }
    }
}
