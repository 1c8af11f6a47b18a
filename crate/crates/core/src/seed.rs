//! Seed derivation for independent jobs.
//!
//! Every random stream in a run is keyed by the master seed plus a path of
//! integer labels (condition index, job index, utterance index, ...). The
//! child seed is obtained by folding each label into the state with one
//! SplitMix64 round:
//!
//! ```text
//! state = master
//! for label in path: state = splitmix64(state ^ splitmix64(label + GOLDEN))
//! ```
//!
//! The resulting `u64` seeds a `ChaCha8Rng`, whose output stream is fixed
//! across platforms and crate versions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` and a label path.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(master, |state, &label| splitmix64(state ^ splitmix64(label.wrapping_add(GOLDEN))))
}

/// Stable 64-bit label for a text tag (FNV-1a).
pub fn label(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
