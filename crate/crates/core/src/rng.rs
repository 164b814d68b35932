//! Project-wide random number generation.
//!
//! Every random decision in the crate draws from one fixed algorithm:
//! ChaCha with 8 rounds (`rand_chacha::ChaCha8Rng`), keyed from a 64-bit seed
//! via `SeedableRng::seed_from_u64`. ChaCha8 output is specified and stable
//! across library versions and platforms, so a seed pins a run exactly.
//!
//! Independent random decisions (weight init, batch shuffles per epoch,
//! random pruning, permutation search restarts) use the same key but distinct
//! stream numbers, so adding a consumer never perturbs the draws of another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream numbers for the independent random consumers. The values are
/// arbitrary but fixed forever; reusing one for a new purpose would silently
/// correlate two decisions.
pub mod stream {
    /// Layer weight initialization. Add the layer index.
    pub const WEIGHT_INIT: u64 = 0x1000;
    /// Batch shuffling. Add the epoch number.
    pub const SHUFFLE: u64 = 0x2000_0000;
    /// Random weight and neuron pruning.
    pub const PRUNE: u64 = 0x3000_0000;
    /// Permutation search restarts. Add a per-boundary offset.
    pub const PERMUTE: u64 = 0x4000_0000;
    /// Synthetic dataset generation.
    pub const DATA: u64 = 0x5000_0000;
}

/// Generator for `seed` on the given stream.
pub fn for_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
