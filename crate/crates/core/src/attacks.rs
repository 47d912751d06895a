//! Model-completion attacks: a passive party that keeps its trained
//! extractor fits a small head on top of it with a handful of labels.
//!
//! * PMC: the extractor is taken as-is after federated training.
//! * AMC: during training the passive party boosts its own local updates so
//!   the federated head leans on its representations; completion follows.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Split, VerticalDataset};
use crate::engine::{accuracy, argmax_rows, AmcHook, Federation};
use crate::error::{bail, Result};
use crate::nn::{cross_entropy_logits, Network};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Pmc,
    Amc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadArch {
    /// Three dense layers.
    Mlp,
    /// A single dense layer.
    MlpSim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    Count(usize),
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub head: HeadArch,
    pub budget: Budget,
    pub epochs: u64,
    pub lr: f64,
    pub batch_size: usize,
    /// Hidden widths of the `Mlp` head.
    pub mlp_hidden: Vec<usize>,
    /// AMC only: multiplier on the passive party's local updates.
    pub amc_boost: f64,
    /// AMC only: per-parameter adaptive scaling (otherwise plain scaling).
    pub amc_adaptive: bool,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackKind::Pmc,
            head: HeadArch::Mlp,
            budget: Budget::Count(40),
            epochs: 300,
            lr: 0.05,
            batch_size: 32,
            mlp_hidden: vec![64, 64],
            amc_boost: 1.0,
            amc_adaptive: true,
            seed: 0,
        }
    }
}

impl AttackConfig {
    /// Hook the passive party installs before training (AMC only).
    pub fn amc_hook(&self) -> Option<AmcHook> {
        (self.kind == AttackKind::Amc).then_some(AmcHook {
            boost: self.amc_boost,
            adaptive: self.amc_adaptive,
        })
    }

    pub fn head_widths(&self, rep_dim: usize, classes: usize) -> Vec<usize> {
        let mut w = vec![rep_dim];
        if self.head == HeadArch::Mlp {
            w.extend_from_slice(&self.mlp_hidden);
        }
        w.push(classes);
        w
    }
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    /// Test accuracy of `head(extractor(x))`.
    pub accuracy: f64,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub head: Network,
    pub labeled: usize,
}

/// Seeded class-balanced sample of training rows: `budget / C` per class,
/// with the remainder spread over the first classes.
pub fn balanced_subset(ds: &VerticalDataset, budget: Budget, seed: u64) -> Result<Vec<usize>> {
    let train = ds.indices(Split::Train);
    let n = match budget {
        Budget::All => return Ok(train.to_vec()),
        Budget::Count(n) => n,
    };
    let c = ds.classes();
    if n < c {
        bail!(Config, "labeled budget {n} below class count {c}; cannot balance");
    }
    if n > train.len() {
        bail!(Config, "labeled budget {n} exceeds training split ({})", train.len());
    }
    let mut order = train.to_vec();
    let mut rng = rng::stream(seed, Stream::Attack);
    rng::shuffle(&mut rng, &mut order);
    let mut quota: Vec<usize> = (0..c).map(|y| n / c + usize::from(y < n % c)).collect();
    let mut picked = Vec::with_capacity(n);
    for i in order {
        let y = ds.labels()[i];
        if quota[y] > 0 {
            quota[y] -= 1;
            picked.push(i);
        }
    }
    picked.sort_unstable();
    Ok(picked)
}

/// Passive model completion on a frozen extractor of party `party`.
pub fn pmc(extractor: &Network, ds: &VerticalDataset, party: usize, cfg: &AttackConfig) -> Result<AttackResult> {
    let frozen = extractor.clone();
    let rows = balanced_subset(ds, cfg.budget, cfg.seed)?;
    let reps = extractor.predict(&ds.party(party).select_rows(&rows))?;
    let labels: Vec<usize> = rows.iter().map(|&i| ds.labels()[i]).collect();

    let widths = cfg.head_widths(extractor.output_dim(), ds.classes());
    let mut head = Network::mlp(&widths, &mut rng::stream_with_index(cfg.seed, Stream::Init, 400))?;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut shuffle = rng::stream_with_index(cfg.seed, Stream::Attack, 1);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs as usize);
    let bs = cfg.batch_size.max(1);
    for _ in 0..cfg.epochs {
        rng::shuffle(&mut shuffle, &mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(bs) {
            let x = reps.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let trace = head.forward(&x)?;
            let (loss, g) = cross_entropy_logits(trace.output(), &y)?;
            let grads = head.backward(&trace, &g)?;
            head.sgd_step(&grads, cfg.lr)?;
            total += loss;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }

    assert!(extractor.bit_eq(&frozen), "completion must not touch the extractor");
    let test_reps = extractor.predict(&ds.split_party(party, Split::Test))?;
    let accuracy = accuracy(&argmax_rows(&head.predict(&test_reps)?), &ds.split_labels(Split::Test));
    Ok(AttackResult {
        accuracy,
        epoch_losses,
        head,
        labeled: rows.len(),
    })
}

/// Completion step of the active attack: the federation must have been
/// trained with [`AttackConfig::amc_hook`] installed on party 2.
pub fn amc(fed: &Federation, ds: &VerticalDataset, cfg: &AttackConfig) -> Result<AttackResult> {
    if fed.parties() < 2 {
        bail!(Config, "AMC needs a passive party");
    }
    pmc(fed.passive(1).extractor(), ds, 1, cfg)
}

/// Representations of a whole split through a frozen extractor.
pub fn represent_split(extractor: &Network, ds: &VerticalDataset, party: usize, split: Split) -> Result<Tensor> {
    extractor.predict(&ds.split_party(party, split))
}
