//! Built-in numerical checks run by `vflkit selftest`.

use rand::Rng;

use vflkit_core::data::{generate_synthetic, SyntheticSpec};
use vflkit_core::dimip::{vclub_s, DimipConfig};
use vflkit_core::engine::{Defense, Direction, Federation, FederationConfig};
use vflkit_core::nn::{cross_entropy_logits, finite_diff_check, log_softmax, Network};
use vflkit_core::rng::{stream_with_index, Stream};
use vflkit_core::Tensor;

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub fn run_all() -> Vec<SuiteResult> {
    vec![finite_differences(), vclub_identities(), protocol_conservation()]
}

fn suite(name: &'static str, outcome: Result<String, String>) -> SuiteResult {
    match outcome {
        Ok(detail) => SuiteResult { name, passed: true, detail },
        Err(detail) => SuiteResult { name, passed: false, detail },
    }
}

fn random_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Backprop vs central differences for cross-entropy, the two DIMIP label
/// losses, and a squared loss, over 20 random networks each.
pub fn finite_differences() -> SuiteResult {
    let run = || -> Result<String, String> {
        let mut worst = 0.0f64;
        for seed in 0..20u64 {
            let mut rng = stream_with_index(seed, Stream::Init, 900);
            let depth = rng.random_range(1..4);
            let mut widths = vec![rng.random_range(2..6)];
            widths.extend((0..depth).map(|_| rng.random_range(2..7)));
            let mut net = Network::mlp(&widths, &mut rng).map_err(|e| e.to_string())?;
            // zero biases behind a dead layer put the next ReLU exactly on its
            // kink, where no derivative exists
            for p in net.params_mut() {
                p.bias.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            }
            let x = random_tensor(5, widths[0], &mut rng);
            let c = *widths.last().expect("non-empty");
            let y: Vec<usize> = (0..5).map(|_| rng.random_range(0..c)).collect();
            let ys: Vec<usize> = (0..5).map(|_| rng.random_range(0..c)).collect();
            let losses: [&dyn Fn(&Tensor) -> vflkit_core::Result<(f64, Tensor)>; 3] = [
                &|o| cross_entropy_logits(o, &y),
                &|o| {
                    let (a, ga) = cross_entropy_logits(o, &y)?;
                    let (b, gb) = cross_entropy_logits(o, &ys)?;
                    Ok((b - a, gb.axpby(1.0, &ga, -1.0)?))
                },
                &|o| Ok((0.5 * o.data().iter().map(|v| v * v).sum::<f64>(), o.clone())),
            ];
            for loss in losses {
                let err = finite_diff_check(&net, &x, loss, 1e-5).map_err(|e| e.to_string())?;
                worst = worst.max(err);
            }
        }
        if worst < 1e-4 {
            Ok(format!("max_rel_err={worst:.3e}"))
        } else {
            Err(format!("max_rel_err={worst:.3e} exceeds 1e-4"))
        }
    };
    suite("finite_differences", run())
}

/// Zero under identical shuffle, zero under a uniform predictor, and the
/// exact expectation over all shuffles equals the full-pairing bound.
pub fn vclub_identities() -> SuiteResult {
    let run = || -> Result<String, String> {
        let n = 6;
        let c = 3;
        let mut rng = stream_with_index(1, Stream::Init, 901);
        let lp = log_softmax(&random_tensor(n, c, &mut rng));
        let y: Vec<usize> = (0..n).map(|i| i % c).collect();
        let same = vclub_s(&lp, &y, &y).map_err(|e| e.to_string())?;
        let uniform = log_softmax(&Tensor::zeros(n, c));
        let ys: Vec<usize> = (0..n).map(|i| (i + 1) % c).collect();
        let flat = vclub_s(&uniform, &y, &ys).map_err(|e| e.to_string())?;

        // enumerate every shuffle y'_i in y (n^n assignments)
        let mut total = 0.0;
        let mut comp = 0.0;
        let mut count = 0u64;
        let mut idx = vec![0usize; n];
        loop {
            let shuffled: Vec<usize> = idx.iter().map(|&j| y[j]).collect();
            let v = vclub_s(&lp, &y, &shuffled).map_err(|e| e.to_string())?;
            let t = total + v;
            comp += if f64::abs(total) >= f64::abs(v) { (total - t) + v } else { (v - t) + total };
            total = t;
            count += 1;
            let mut pos = 0;
            while pos < n {
                idx[pos] += 1;
                if idx[pos] < n {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
            if pos == n {
                break;
            }
        }
        let expectation = (total + comp) / count as f64;
        let mut full = 0.0;
        for i in 0..n {
            full += lp.get(i, y[i]) / n as f64;
            for &yj in &y {
                full -= lp.get(i, yj) / (n * n) as f64;
            }
        }
        let diff = (expectation - full).abs();
        if same == 0.0 && flat.abs() < 1e-15 && diff < 1e-12 {
            Ok(format!("identical={same:e} uniform={flat:e} expectation_gap={diff:.3e}"))
        } else {
            Err(format!("identical={same:e} uniform={flat:e} expectation_gap={diff:.3e}"))
        }
    };
    suite("vclub_identities", run())
}

/// Every upload answered once with a same-shape gradient, with and without
/// DIMIP, and the two traces differ only in gradient payloads.
pub fn protocol_conservation() -> SuiteResult {
    let run = || -> Result<String, String> {
        let mut spec = SyntheticSpec::two_party_default();
        spec.samples = 300;
        let ds = generate_synthetic(&spec).map_err(|e| e.to_string())?;
        let base = FederationConfig::two_party([spec.parties[0].dim, spec.parties[1].dim], spec.classes, 5);
        let mut protected = base.clone();
        protected.defense = Defense::Dimip(DimipConfig {
            lambda: 0.5,
            ..DimipConfig::default()
        });
        let mut plain = Federation::new(base).map_err(|e| e.to_string())?;
        let mut dimip = Federation::new(protected).map_err(|e| e.to_string())?;
        for epoch in 0..2 {
            plain.train_epoch(&ds, 32, epoch).map_err(|e| e.to_string())?;
            dimip.train_epoch(&ds, 32, epoch).map_err(|e| e.to_string())?;
        }
        let mut answered = 0;
        for fed in [&plain, &dimip] {
            let trace = fed.protocol_trace();
            answered = trace.check_conservation().map_err(|e| format!("unanswered or mismatched message {e:?}"))?;
            let uploads = trace.events().iter().filter(|e| e.direction == Direction::Upload).count();
            if uploads != answered {
                return Err(format!("{uploads} uploads but {answered} answers"));
            }
        }
        let (a, b) = (plain.protocol_trace().events(), dimip.protocol_trace().events());
        if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.shape_only() != y.shape_only()) {
            return Err("traces differ in more than gradient payloads".into());
        }
        if a.iter().zip(b).any(|(x, y)| x.direction == Direction::Upload && x.round == 0 && x.digest != y.digest) {
            return Err("first-round uploads differ".into());
        }
        Ok(format!("answered={answered} events={}", a.len()))
    };
    suite("protocol_conservation", run())
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_suites_pass() {
        for s in super::run_all() {
            assert!(s.passed, "{}: {}", s.name, s.detail);
        }
    }
}
