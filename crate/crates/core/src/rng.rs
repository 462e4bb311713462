//! Seeded random streams.
//!
//! Every random draw in the crate goes through ChaCha20 keyed by
//! `seed_from_u64(seed)`, with independent consumers separated by the
//! generator's 64-bit stream id. The algorithm identifier is written next to
//! every trace so another implementation of the same generator can replay it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub const RNG_ALGORITHM: &str = "chacha20/seed_from_u64/stream";

/// Stream ids used by the simulator and the probes.
pub mod stream {
    pub const CHANNEL: u64 = 1;
    pub const ARRIVALS: u64 = 2;
    pub const CONDITION1: u64 = 16;
    pub const CONDITION2: u64 = 17;
    pub const DRIFT: u64 = 32;
    pub const JITTER: u64 = 48;
    pub const GRID_DIRECTIONS: u64 = 64;
}

pub type StreamRng = ChaCha20Rng;

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Substream for a sub-task (probe level, drift sample batch, ...). Keeps
/// the stream id space of `base` disjoint from other consumers by offsetting
/// into the upper 32 bits.
pub fn substream_rng(seed: u64, base: u64, index: u64) -> StreamRng {
    stream_rng(seed, (base << 32) | (index & 0xffff_ffff))
}

/// Uniform draw from the probability simplex scaled to ‖x‖₁ = `total`
/// (symmetric Dirichlet(1) via normalized exponentials).
pub fn simplex_point<R: Rng + ?Sized>(rng: &mut R, m: usize, total: f64) -> Vec<f64> {
    let mut e: Vec<f64> = (0..m)
        .map(|_| {
            // 1 - u lies in (0, 1], so the log is finite.
            let u: f64 = rng.random();
            -(1.0 - u).ln()
        })
        .collect();
    let s: f64 = e.iter().sum();
    if s == 0.0 {
        return vec![total / m as f64; m];
    }
    for x in &mut e {
        *x *= total / s;
    }
    e
}
