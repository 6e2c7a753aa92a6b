//! Stateless random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream whose 256-bit key is
//! the triple (master seed, sample index, tag). Streams are independent of
//! evaluation order and thread count, so any draw can be recomputed in
//! isolation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Identifies what a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamTag {
    Snr = 0x534e_5200,
    Noiseless = 0x4e4f_4953,
    NoiseSeed = 0x4e53_4544,
    Noise = 0x4e4f_4953_4500,
    GradFluct = 0x4752_4144,
    B1 = 0x4231_0000,
    Motion = 0x4d4f_5449,
    T2Scale = 0x5432_5343,
    Augment = 0x4155_474d,
    Template = 0x5445_4d50,
    Coil = 0x434f_494c,
    CoilGeometry = 0x434f_4745,
    Phantom = 0x5048_414e,
    Velocity = 0x5645_4c4f,
}

/// Returns the stream keyed by `(seed, index, tag)`.
pub fn stream(seed: u64, index: u64, tag: StreamTag) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    key[16..24].copy_from_slice(&(tag as u64).to_le_bytes());
    key[24..32].copy_from_slice(b"forge-v1");
    ChaCha8Rng::from_seed(key)
}

/// Uniform draw in `[lo, hi]`; returns `lo` exactly when `lo == hi`.
pub fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    let u: f64 = rng.random();
    (lo + (hi - lo) * u).clamp(lo, hi)
}

pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn index_below(rng: &mut impl Rng, n: usize) -> usize {
    rng.random_range(0..n)
}
