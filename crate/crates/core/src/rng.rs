//! Seed derivation and counter-based random streams.
//!
//! Every random draw in the planner comes from a ChaCha stream addressed by a
//! tuple of integers (run seed, planning step, sample, channel, role). Streams
//! are independent of evaluation order, so parallel and sequential execution
//! produce identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a list of words into one 64-bit key.
pub fn hash_words(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6A09_E667_F3BC_C908, |acc, &w| mix64(acc ^ mix64(w)))
}

/// FNV-1a over bytes, used to turn names into seed words.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// What a stream is used for inside one (sample, channel) slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamRole {
    /// Draws added directly to the input (BG, second 2DF group, NF-A2DF base).
    Direct = 0,
    /// Draws at derivative level that get integrated (IL, first 2DF group, NF-AIL base).
    Derivative = 1,
}

/// Master key of all streams used within one planning step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamSeed {
    pub seed: u64,
    pub step: u64,
}

impl StreamSeed {
    pub fn new(seed: u64, step: u64) -> Self {
        Self { seed, step }
    }

    pub fn stream(&self, sample: usize, channel: usize, role: StreamRole) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(hash_words(&[self.seed, self.step]));
        rng.set_stream(hash_words(&[sample as u64, channel as u64, role as u64]));
        rng
    }
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
