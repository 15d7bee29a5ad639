//! Deterministic seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator keyed by a seed
//! derived from one master seed plus a path of integers (run seed, purpose
//! tag, epoch, sample index, ...). Derivation uses the SplitMix64 finalizer,
//! so streams are independent of evaluation order and thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and a path of stream identifiers.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(master.wrapping_add(GOLDEN)), |acc, &p| {
        mix(acc ^ mix(p.wrapping_add(GOLDEN)))
    })
}

/// Generator for the stream identified by `path` under `master`.
pub fn rng(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, path))
}

/// Stream tags, so that independent consumers never share a stream.
pub mod tag {
    pub const DATASET: u64 = 1;
    pub const TEACHER_INIT: u64 = 2;
    pub const STUDENT_INIT: u64 = 3;
    pub const TEACHER_SHUFFLE: u64 = 4;
    pub const STUDENT_SHUFFLE: u64 = 5;
    pub const NOISE: u64 = 6;
    pub const MC_TRIAL: u64 = 7;
}
