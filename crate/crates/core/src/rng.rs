//! Seeded random streams.
//!
//! A single master seed fans out into independent ChaCha streams, one per
//! consumer. Enabling a stochastic feature (dropout masks, defense noise,
//! label shuffling) therefore never shifts the draws seen by another one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Named consumers of randomness. The discriminant is the ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Split = 2,
    Shuffle = 3,
    Mask = 4,
    DefenseNoise = 5,
    LabelShuffle = 6,
    Attack = 7,
    /// Parameter initialization; offset by a network index so every network
    /// gets its own stream.
    Init = 1 << 16,
}

/// Returns the stream `which` derived from `seed`.
pub fn stream(seed: u64, which: Stream) -> StreamRng {
    stream_with_index(seed, which, 0)
}

/// Returns stream `which` at sub-index `index` (e.g. one init stream per network).
pub fn stream_with_index(seed: u64, which: Stream, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64 + index);
    rng
}

/// Draws from Laplace(0, scale) by inverse CDF.
pub fn laplace<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    // u in (-1/2, 1/2], excluding the endpoint that maps to infinity
    let u: f64 = rng.random::<f64>() - 0.5;
    let sign = if u < 0.0 { -1.0 } else { 1.0 };
    -scale * sign * libm::log1p(-2.0 * libm::fabs(u))
}

/// Draws from N(0, 1).
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

/// Fisher-Yates shuffle of `items`.
pub fn shuffle<T, R: Rng + ?Sized>(rng: &mut R, items: &mut [T]) {
    use rand::seq::SliceRandom;
    items.shuffle(rng);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_independent_and_reproducible() {
        let mut a = stream(7, Stream::Mask);
        let mut b = stream(7, Stream::Mask);
        let mut c = stream(7, Stream::Shuffle);
        let xa: u64 = a.random();
        assert_eq!(xa, b.random::<u64>());
        assert_ne!(xa, c.random::<u64>());
    }

    #[test]
    fn laplace_zero_scale_is_zero() {
        let mut r = stream(1, Stream::DefenseNoise);
        assert_eq!(laplace(&mut r, 0.0), 0.0);
    }
}
