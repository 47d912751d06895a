//! Baseline perturbations applied by the active party to representation
//! gradients before they cross the boundary.
//!
//! Each defense sees one outgoing gradient message at a time. Active-side
//! parameter updates always use the unperturbed gradients.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Gradient-perturbation defenses with their parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientDefense {
    /// Additive Laplace(0, scale) noise.
    Ng { scale: f64 },
    /// Keep only the largest `1 - rate` fraction of entries by magnitude.
    Gc { rate: f64 },
    /// Random selection of up to a `theta` fraction of entries with
    /// `|g| >= tau`, released with Laplace(0, noise) added.
    Ppdl { tau: f64, theta: f64, noise: f64 },
    /// Quantization to `levels` values spanning the message range, plus noise.
    Dsgd { levels: u32, noise: f64 },
}

impl GradientDefense {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GradientDefense::Ng { scale } if !(scale >= 0.0) => bail!(Config, "ng scale {scale} < 0"),
            GradientDefense::Gc { rate } if !(0.0..=1.0).contains(&rate) => {
                bail!(Config, "gc rate {rate} outside [0, 1]")
            }
            GradientDefense::Ppdl { tau, theta, noise }
                if !(tau >= 0.0) || !(0.0..=1.0).contains(&theta) || !(noise >= 0.0) =>
            {
                bail!(Config, "ppdl needs tau >= 0, theta in [0, 1], noise >= 0")
            }
            GradientDefense::Dsgd { levels, noise } if levels == 0 || !(noise >= 0.0) => {
                bail!(Config, "dsgd needs levels >= 1 and noise >= 0")
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GradientDefense::Ng { .. } => "ng",
            GradientDefense::Gc { .. } => "gc",
            GradientDefense::Ppdl { .. } => "ppdl",
            GradientDefense::Dsgd { .. } => "dsgd",
        }
    }

    pub fn apply<R: Rng + ?Sized>(&self, grad: &Tensor, rng: &mut R) -> Tensor {
        match *self {
            GradientDefense::Ng { scale } => ng(grad, scale, rng),
            GradientDefense::Gc { rate } => gc(grad, rate),
            GradientDefense::Ppdl { tau, theta, noise } => ppdl(grad, tau, theta, noise, rng),
            GradientDefense::Dsgd { levels, noise } => dsgd(grad, levels, noise, rng),
        }
    }
}

/// `ceil(fraction * len)` with float noise in the product trimmed, so that
/// e.g. `0.3 * 10` counts as 3.
fn fraction_count(fraction: f64, len: usize) -> usize {
    let raw = fraction * len as f64;
    (libm::ceil(raw - 1e-9).max(0.0) as usize).min(len)
}

pub fn ng<R: Rng + ?Sized>(grad: &Tensor, scale: f64, rng: &mut R) -> Tensor {
    if scale == 0.0 {
        return grad.clone();
    }
    let mut out = grad.clone();
    for v in out.data_mut() {
        *v += rng::laplace(rng, scale);
    }
    out
}

pub fn gc(grad: &Tensor, rate: f64) -> Tensor {
    let keep = fraction_count(1.0 - rate, grad.len());
    if keep == grad.len() {
        return grad.clone();
    }
    let mut order: Vec<usize> = (0..grad.len()).collect();
    // stable: equal magnitudes keep their flat-index order
    order.sort_by(|&a, &b| {
        libm::fabs(grad.data()[b])
            .partial_cmp(&libm::fabs(grad.data()[a]))
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let mut out = Tensor::new(grad.shape().to_vec(), alloc::vec![0.0; grad.len()]).expect("same shape");
    for &i in &order[..keep] {
        out.data_mut()[i] = grad.data()[i];
    }
    out
}

pub fn ppdl<R: Rng + ?Sized>(grad: &Tensor, tau: f64, theta: f64, noise: f64, rng: &mut R) -> Tensor {
    let quota = fraction_count(theta, grad.len());
    let mut out = Tensor::new(grad.shape().to_vec(), alloc::vec![0.0; grad.len()]).expect("same shape");
    if quota == 0 {
        return out;
    }
    let mut candidates: Vec<usize> = (0..grad.len()).collect();
    rng::shuffle(rng, &mut candidates);
    let mut released = 0;
    for i in candidates {
        let v = grad.data()[i];
        // threshold on the clean value, then perturb
        if libm::fabs(v) >= tau {
            out.data_mut()[i] = v + rng::laplace(rng, noise);
            released += 1;
            if released == quota {
                break;
            }
        }
    }
    out
}

pub fn dsgd<R: Rng + ?Sized>(grad: &Tensor, levels: u32, noise: f64, rng: &mut R) -> Tensor {
    let data = grad.data();
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let mut out = grad.clone();
    for v in out.data_mut() {
        let q = if levels <= 1 || range == 0.0 {
            if levels <= 1 {
                0.5 * (lo + hi)
            } else {
                *v
            }
        } else {
            let step = range / f64::from(levels - 1);
            let j = libm::round((*v - lo) / step).clamp(0.0, f64::from(levels - 1));
            if j == f64::from(levels - 1) {
                hi
            } else {
                lo + j * step
            }
        };
        *v = q + rng::laplace(rng, noise);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn random_grad(seed: u64, n: usize) -> Tensor {
        let mut r = stream(seed, Stream::Data);
        Tensor::matrix(1, n, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn ng_zero_scale_is_identity() {
        let g = random_grad(1, 10);
        let mut r = stream(0, Stream::DefenseNoise);
        assert!(ng(&g, 0.0, &mut r).bit_eq(&g));
    }

    #[test]
    fn ng_noise_moments_match_laplace() {
        let b = 0.01;
        let n = 1_000_000;
        let zeros = Tensor::zeros(1, n);
        let mut r = stream(3, Stream::DefenseNoise);
        let noise = ng(&zeros, b, &mut r);
        let mean = noise.sum() / n as f64;
        let var = noise.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let expected = 2.0 * b * b;
        assert!((var / expected - 1.0).abs() < 0.02, "var {var} vs {expected}");
        let sigma_mean = libm::sqrt(expected / n as f64);
        assert!(mean.abs() < 3.0 * sigma_mean, "mean {mean}");
    }

    #[test]
    fn gc_examples() {
        let g = Tensor::from_rows(&[[3.0, -1.0, 2.0, 0.0]]);
        assert_eq!(gc(&g, 0.5), Tensor::from_rows(&[[3.0, 0.0, 2.0, 0.0]]));
        assert!(gc(&g, 0.0).bit_eq(&g));
        assert!(gc(&g, 1.0).data().iter().all(|&v| v == 0.0));
        // tie: the earlier index survives
        let t = Tensor::from_rows(&[[1.0, -1.0, 1.0]]);
        assert_eq!(gc(&t, 0.5), Tensor::from_rows(&[[1.0, -1.0, 0.0]]));
    }

    #[test]
    fn ppdl_limits() {
        let g = random_grad(4, 50);
        let mut r = stream(0, Stream::DefenseNoise);
        assert!(ppdl(&g, 0.0, 0.0, 0.0, &mut r).data().iter().all(|&v| v == 0.0));
        assert!(ppdl(&g, 0.0, 1.0, 0.0, &mut r).bit_eq(&g));
    }

    #[test]
    fn ppdl_release_count() {
        for seed in 0..30 {
            let g = random_grad(seed, 40);
            let tau = 0.5;
            let theta = 0.1;
            let mut r = stream(seed, Stream::DefenseNoise);
            let out = ppdl(&g, tau, theta, 0.0, &mut r);
            let released = out.data().iter().filter(|&&v| v != 0.0).count();
            let quota = 4; // ceil(0.1 * 40)
            let eligible = g.data().iter().filter(|v| v.abs() >= tau).count();
            assert!(released <= quota);
            if eligible >= quota {
                assert_eq!(released, quota, "seed {seed}");
            }
            // released entries are exact copies when noise is off
            for (o, v) in out.data().iter().zip(g.data()) {
                assert!(*o == 0.0 || o == v);
            }
        }
    }

    #[test]
    fn dsgd_examples() {
        let mut r = stream(0, Stream::DefenseNoise);
        let g = Tensor::from_rows(&[[0.25, -1.0, 3.0]]);
        let one = dsgd(&g, 1, 0.0, &mut r);
        assert!(one.data().iter().all(|&v| v == 1.0));
        let two = dsgd(&Tensor::from_rows(&[[0.0, 1.0]]), 2, 0.0, &mut r);
        assert_eq!(two, Tensor::from_rows(&[[0.0, 1.0]]));
    }

    #[test]
    fn dsgd_fine_quantization_error_bound() {
        let g = random_grad(8, 5000);
        let mut r = stream(0, Stream::DefenseNoise);
        let q = dsgd(&g, 1024, 0.0, &mut r);
        let lo = g.data().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = g.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let bound = (hi - lo) / 2046.0;
        let worst = g.data().iter().zip(q.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= bound * (1.0 + 1e-12), "{worst} > {bound}");
    }

    #[test]
    fn defenses_preserve_shape_and_are_seed_deterministic() {
        let g = Tensor::new(alloc::vec![4, 3], (0..12).map(|i| i as f64 - 5.5).collect()).unwrap();
        let all = [
            GradientDefense::Ng { scale: 0.1 },
            GradientDefense::Gc { rate: 0.9 },
            GradientDefense::Ppdl {
                tau: 0.001,
                theta: 0.5,
                noise: 0.01,
            },
            GradientDefense::Dsgd { levels: 2, noise: 0.01 },
        ];
        for d in all {
            let mut a = stream(9, Stream::DefenseNoise);
            let mut b = stream(9, Stream::DefenseNoise);
            let x = d.apply(&g, &mut a);
            assert_eq!(x.shape(), g.shape());
            assert!(x.bit_eq(&d.apply(&g, &mut b)), "{}", d.name());
        }
    }
}
