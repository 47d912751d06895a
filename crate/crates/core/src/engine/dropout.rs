use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Result};

/// Which passive parties are omitted this round. `dropped[j]` refers to
/// party `j + 2` (1-based ids; the active party is never masked).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DropoutMask {
    dropped: Vec<bool>,
}

impl DropoutMask {
    pub fn none(passive: usize) -> Self {
        Self {
            dropped: alloc::vec![false; passive],
        }
    }

    pub fn from_bits(dropped: Vec<bool>) -> Self {
        Self { dropped }
    }

    /// Whether zero-based party index `k` (k >= 1) is dropped.
    pub fn is_dropped(&self, k: usize) -> bool {
        k >= 1 && self.dropped.get(k - 1).copied().unwrap_or(false)
    }

    pub fn bits(&self) -> &[bool] {
        &self.dropped
    }

    /// Bit `j` set when party `j + 2` is dropped.
    pub fn as_u32(&self) -> u32 {
        self.dropped
            .iter()
            .enumerate()
            .fold(0, |m, (j, &d)| if d { m | (1 << j) } else { m })
    }

    pub fn any(&self) -> bool {
        self.dropped.iter().any(|&d| d)
    }
}

pub fn validate_dropout(p: &[f64]) -> Result<()> {
    if let Some(bad) = p.iter().find(|v| !(0.0..1.0).contains(*v)) {
        bail!(Config, "dropout probability {bad} outside [0, 1)");
    }
    Ok(())
}

/// Independent Bernoulli(p_k) per passive party. Always consumes exactly one
/// uniform draw per passive party, whatever the probabilities, so runs with
/// p = 0 stay draw-for-draw aligned with runs that never mask.
pub fn sample_mask<R: Rng + ?Sized>(dropout_p: &[f64], rng: &mut R) -> DropoutMask {
    let dropped = dropout_p
        .iter()
        .map(|&p| {
            let u: f64 = rng.random();
            u < p
        })
        .collect();
    DropoutMask { dropped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn zero_probabilities_never_mask() {
        let mut rng = stream(1, Stream::Mask);
        for _ in 0..1000 {
            assert!(!sample_mask(&[0.0, 0.0, 0.0], &mut rng).any());
        }
    }

    #[test]
    fn drop_frequency_tracks_probability() {
        for p in [0.05, 0.3, 0.5] {
            let mut rng = stream(17, Stream::Mask);
            let hits = (0..10_000)
                .filter(|_| sample_mask(&[p], &mut rng).is_dropped(1))
                .count();
            let freq = hits as f64 / 10_000.0;
            assert!((freq - p).abs() <= 0.02, "p = {p}: {freq}");
        }
    }

    #[test]
    fn same_seed_same_masks_and_draw_count_is_fixed() {
        let mut a = stream(5, Stream::Mask);
        let mut b = stream(5, Stream::Mask);
        for _ in 0..100 {
            assert_eq!(sample_mask(&[0.3, 0.7], &mut a), sample_mask(&[0.3, 0.7], &mut b));
        }
        // p = 0 consumes the same draws as p > 0
        let mut c = stream(5, Stream::Mask);
        let mut d = stream(5, Stream::Mask);
        sample_mask(&[0.0, 0.0], &mut c);
        sample_mask(&[0.9, 0.4], &mut d);
        assert_eq!(c.random::<u64>(), d.random::<u64>());
    }

    #[test]
    fn rejects_probability_one() {
        assert!(validate_dropout(&[0.5, 1.0]).is_err());
        assert!(validate_dropout(&[0.0, 0.99]).is_ok());
    }
}
