//! Deterministic random streams.
//!
//! Every consumer of randomness gets its own ChaCha8 stream keyed by
//! `(master seed, path index, lane, sub-index)`. Streams never depend on scheduling, so
//! results are identical for any thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Lane of the systematic-factor increments of a path.
pub const LANE_SYSTEMATIC: u64 = u64::MAX;
/// Lane of the Scheme-1 fluctuation samples drawn on a path.
pub const LANE_FLUCTUATION: u64 = u64::MAX - 1;
/// Lane of the bridge skeleton samples drawn on a path.
pub const LANE_SKELETON: u64 = u64::MAX - 2;
/// Lane of fine-step Brownian bridge refinement.
pub const LANE_REFINE: u64 = u64::MAX - 3;

/// Stream for `(master, path, lane, sub)`. Name `n` of a pool path uses lane
/// `n`; Scheme-1 sample `j` on path `m` uses `(m, LANE_FLUCTUATION, j)`.
pub fn stream_rng(master: u64, path: u64, lane: u64, sub: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master.to_le_bytes());
    key[8..16].copy_from_slice(&path.to_le_bytes());
    key[16..24].copy_from_slice(&lane.to_le_bytes());
    key[24..].copy_from_slice(&sub.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
