//! Named random streams.
//!
//! Every stochastic draw in the testbed comes from a ChaCha8 generator whose
//! 64-bit seed is derived from `(global seed, purpose, step, prompt_id)` with
//! the SplitMix64 finalizer. Any implementation of ChaCha8 and SplitMix64 can
//! therefore reproduce a run from its seed alone, and per-prompt streams make
//! sampling order-independent across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags that keep otherwise identical `(step, prompt)` coordinates
/// on disjoint streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Dataset = 1,
    Rollout = 2,
    Batch = 3,
    Eval = 4,
    Init = 5,
}

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: Stream, step: u64, prompt_id: u64) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ stream as u64);
    h = splitmix64(h ^ step);
    splitmix64(h ^ prompt_id)
}

pub fn stream_rng(seed: u64, stream: Stream, step: u64, prompt_id: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, step, prompt_id))
}
