//! Vertically partitioned datasets.
//!
//! Every party holds a column block of the same rows; only the active party
//! (party 1, index 0) sees the labels. Rows are aligned by sample index.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Result};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// One party's column block in a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartyBlock {
    pub dim: usize,
    /// Scales this block's class-mean separation; 0 makes the block pure noise.
    pub informativeness: f64,
}

/// Recipe for a Gaussian-blob dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub classes: usize,
    pub parties: Vec<PartyBlock>,
    pub class_separation: f64,
    pub noise_std: f64,
    /// When set, the label's parity bit is split between parties 1 and 2 as a
    /// pair of ±`key_scale` columns whose product encodes it. Each column is
    /// independent of the label on its own; the blob means then depend only on
    /// `label / 2`.
    pub paired_key: Option<f64>,
    /// Probability that a sample's blobs, in every party at once, are drawn
    /// around a uniformly random group instead of its own. The confusion is
    /// shared, so no combination of parties can undo it: the blocks become
    /// partly redundant.
    pub shared_confusion: f64,
    /// With a paired key: party 1 also gets a weak direct view of the parity
    /// bit, a column holding `±h` plus noise. Alone it beats a coin flip;
    /// next to the key it is redundant.
    pub parity_hint: Option<f64>,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Two parties, ten classes: the default desk-scale benchmark.
    ///
    /// Both blobs identify the label pair equally well and share their
    /// confusions, so they are largely redundant. The bit inside a pair comes
    /// cleanly from the two key columns together, or weakly from party 1's
    /// hint column alone.
    pub fn two_party_default() -> Self {
        Self {
            samples: 4000,
            classes: 10,
            parties: vec![
                PartyBlock {
                    dim: 8,
                    informativeness: 1.0,
                },
                PartyBlock {
                    dim: 8,
                    informativeness: 1.0,
                },
            ],
            class_separation: 4.0,
            noise_std: 0.7,
            paired_key: Some(2.0),
            shared_confusion: 0.15,
            parity_hint: Some(0.5),
            test_fraction: 0.2,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            bail!(Input, "need at least 2 classes, got {}", self.classes);
        }
        if self.samples < self.classes {
            bail!(Input, "N = {} < C = {}", self.samples, self.classes);
        }
        if self.parties.is_empty() {
            bail!(Input, "no parties");
        }
        for (k, p) in self.parties.iter().enumerate() {
            if p.dim == 0 {
                bail!(Input, "party {} has d_k = 0", k + 1);
            }
            if !(0.0..=1.0).contains(&p.informativeness) {
                bail!(Input, "party {} informativeness {} outside [0, 1]", k + 1, p.informativeness);
            }
        }
        if !(self.class_separation > 0.0) || !(self.noise_std >= 0.0) {
            bail!(Input, "class separation must be positive and noise std non-negative");
        }
        if !(0.0..1.0).contains(&self.shared_confusion) {
            bail!(Input, "shared confusion {} outside [0, 1)", self.shared_confusion);
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            bail!(Input, "test fraction {} outside [0, 1)", self.test_fraction);
        }
        if self.paired_key.is_some() && !self.classes.is_multiple_of(2) {
            bail!(Input, "paired key needs an even class count, got {}", self.classes);
        }
        if let Some(h) = self.parity_hint {
            if self.paired_key.is_none() {
                bail!(Input, "parity hint needs a paired key");
            }
            if !(h >= 0.0) || !h.is_finite() {
                bail!(Input, "parity hint magnitude {h} must be finite and non-negative");
            }
        }
        for k in 0..self.parties.len() {
            let need = self.reserved_columns(k) + 1;
            if self.parties[k].dim < need {
                bail!(Input, "party {} needs at least {need} columns for its key/hint layout", k + 1);
            }
        }
        if self.paired_key.is_some() && self.parties.len() < 2 {
            bail!(Input, "paired key needs two parties");
        }
        Ok(())
    }

    /// Columns at the end of party `k`'s block that are not blob coordinates:
    /// the hint column (party 1) then the key column (parties 1 and 2).
    pub fn reserved_columns(&self, k: usize) -> usize {
        usize::from(self.paired_key.is_some() && k < 2) + usize::from(self.parity_hint.is_some() && k == 0)
    }

    /// Number of distinct blob means (`C`, or `C / 2` with a paired key).
    pub fn groups(&self) -> usize {
        if self.paired_key.is_some() {
            self.classes / 2
        } else {
            self.classes
        }
    }
}

/// Generating means kept alongside a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMeans {
    /// `means[k]` is `groups x blob_dim_k`.
    pub means: Vec<Tensor>,
    /// Number of blob columns in each party block; reserved columns follow.
    pub blob_dims: Vec<usize>,
    pub paired_key: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerticalDataset {
    parties: Vec<Tensor>,
    labels: Vec<usize>,
    classes: usize,
    /// Cumulative column boundaries of the party blocks in the joint feature space.
    boundaries: Vec<usize>,
    train: Vec<usize>,
    test: Vec<usize>,
    generator: Option<GeneratorMeans>,
}

impl VerticalDataset {
    pub fn new(
        parties: Vec<Tensor>,
        labels: Vec<usize>,
        classes: usize,
        train: Vec<usize>,
        test: Vec<usize>,
    ) -> Result<Self> {
        let Some(first) = parties.first() else {
            bail!(Input, "dataset with no parties");
        };
        let n = first.rows();
        if let Some((k, p)) = parties.iter().enumerate().find(|(_, p)| p.rows() != n) {
            bail!(Dimension, "party {} has {} rows, party 1 has {n}", k + 1, p.rows());
        }
        if labels.len() != n {
            bail!(Dimension, "{} labels for {n} rows", labels.len());
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
            bail!(Input, "label {y} out of range for {classes} classes");
        }
        let mut seen = vec![false; n];
        for &i in train.iter().chain(&test) {
            if i >= n || seen[i] {
                bail!(Input, "row {i} out of range or in both splits");
            }
            seen[i] = true;
        }
        let mut boundaries = Vec::with_capacity(parties.len());
        let mut acc = 0;
        for p in &parties {
            p.ensure_finite("features")?;
            acc += p.cols();
            boundaries.push(acc);
        }
        Ok(Self {
            parties,
            labels,
            classes,
            boundaries,
            train,
            test,
            generator: None,
        })
    }

    /// Builds a dataset from a joint feature matrix: seeded train/test split,
    /// per-column standardization fitted on the train rows, then a vertical
    /// split at `boundaries`.
    pub fn from_table(
        features: &Tensor,
        labels: Vec<usize>,
        boundaries: &[usize],
        test_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&test_fraction) {
            bail!(Input, "test fraction {test_fraction} outside [0, 1)");
        }
        let n = features.rows();
        let Some(&max) = labels.iter().max() else {
            bail!(Input, "empty table");
        };
        let (train, test) = split_indices(n, test_fraction, seed);
        let mut standardized = features.clone();
        standardize_columns(&mut standardized, &train);
        let parties = vertical_split(&standardized, boundaries)?;
        Self::new(parties, labels, max + 1, train, test)
    }

    pub fn parties(&self) -> usize {
        self.parties.len()
    }

    pub fn party(&self, k: usize) -> &Tensor {
        &self.parties[k]
    }

    pub fn party_dims(&self) -> Vec<usize> {
        self.parties.iter().map(Tensor::cols).collect()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn generator(&self) -> Option<&GeneratorMeans> {
        self.generator.as_ref()
    }

    /// Party `k`'s rows for a whole split.
    pub fn split_party(&self, k: usize, split: Split) -> Tensor {
        self.parties[k].select_rows(self.indices(split))
    }

    pub fn split_labels(&self, split: Split) -> Vec<usize> {
        self.indices(split).iter().map(|&i| self.labels[i]).collect()
    }

    /// Joint (all-party) feature matrix, used for CSV export.
    pub fn joint_features(&self) -> Tensor {
        let refs: Vec<&Tensor> = self.parties.iter().collect();
        Tensor::concat_cols(&refs).expect("parties share row count")
    }

    pub fn batches(&self, split: Split, batch_size: usize, seed: u64, epoch: u64) -> Batches<'_> {
        let mut order = self.indices(split).to_vec();
        let mut rng = rng::stream_with_index(seed, Stream::Shuffle, epoch);
        rng::shuffle(&mut rng, &mut order);
        Batches {
            ds: self,
            order,
            batch_size: batch_size.max(1),
            pos: 0,
        }
    }

    /// Accuracy of classifying party `k`'s rows by the nearest generating
    /// mean. With equal priors and isotropic noise this is the Bayes rule for
    /// the block alone; with a paired key the parity bit is a coin flip, so
    /// the expected accuracy is half the group accuracy.
    pub fn nearest_mean_accuracy(&self, k: usize, split: Split) -> Option<f64> {
        let gen = self.generator.as_ref()?;
        let means = &gen.means[k];
        let blob = gen.blob_dims[k];
        let idx = self.indices(split);
        if idx.is_empty() {
            return Some(0.0);
        }
        let mut hits = 0usize;
        for &i in idx {
            let x = &self.parties[k].row(i)[..blob];
            let mut best = (f64::INFINITY, 0);
            for g in 0..means.rows() {
                let d: f64 = x.iter().zip(means.row(g)).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, g);
                }
            }
            let truth = if gen.paired_key { self.labels[i] / 2 } else { self.labels[i] };
            if best.1 == truth {
                hits += 1;
            }
        }
        let acc = hits as f64 / idx.len() as f64;
        Some(if gen.paired_key { acc / 2.0 } else { acc })
    }
}

/// One aligned mini-batch: the same rows from every party plus their labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub parties: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub struct Batches<'a> {
    ds: &'a VerticalDataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let parties = self.ds.parties.iter().map(|p| p.select_rows(&indices)).collect();
        let labels = indices.iter().map(|&i| self.ds.labels[i]).collect();
        Some(Batch {
            indices,
            parties,
            labels,
        })
    }
}

/// Splits columns at cumulative `boundaries` (strictly increasing, last = width).
pub fn vertical_split(features: &Tensor, boundaries: &[usize]) -> Result<Vec<Tensor>> {
    let d = features.cols();
    if boundaries.is_empty() || boundaries.windows(2).any(|w| w[0] >= w[1]) || boundaries[0] == 0 {
        bail!(Input, "boundaries {boundaries:?} must be strictly increasing and positive");
    }
    if *boundaries.last().expect("non-empty") != d {
        bail!(Input, "last boundary {} must equal feature width {d}", boundaries.last().unwrap());
    }
    let mut widths = Vec::with_capacity(boundaries.len());
    let mut prev = 0;
    for &b in boundaries {
        widths.push(b - prev);
        prev = b;
    }
    features.split_cols(&widths)
}

/// Seeded shuffle into `(train, test)`, each returned in ascending order.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::stream(seed, Stream::Split);
    rng::shuffle(&mut rng, &mut order);
    let n_test = libm::round(n as f64 * test_fraction) as usize;
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

/// Shifts and scales every column to zero mean, unit variance over `fit_rows`.
/// Constant columns are only centred.
pub fn standardize_columns(features: &mut Tensor, fit_rows: &[usize]) {
    if fit_rows.is_empty() {
        return;
    }
    let cols = features.cols();
    let n = fit_rows.len() as f64;
    for c in 0..cols {
        let mean = fit_rows.iter().map(|&r| features.get(r, c)).sum::<f64>() / n;
        let var = fit_rows
            .iter()
            .map(|&r| {
                let d = features.get(r, c) - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        let sd = libm::sqrt(var);
        let scale = if sd > 0.0 { 1.0 / sd } else { 1.0 };
        for r in 0..features.rows() {
            let v = features.get(r, c);
            features.set(r, c, (v - mean) * scale);
        }
    }
}

/// Draws a Gaussian-blob dataset.
///
/// Labels are balanced (`i mod C`, then shuffled). Each party block gets blob
/// columns `mean[g] + noise`, where the class means are random unit
/// directions scaled by `class_separation * informativeness`. With a paired
/// key, `g = label / 2` and the last column of parties 1 and 2 carries
/// `±key_scale + noise` with signs whose product encodes `label % 2`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<VerticalDataset> {
    spec.validate()?;
    let n = spec.samples;
    let groups = spec.groups();
    let mut rng = rng::stream(spec.seed, Stream::Data);

    let mut labels: Vec<usize> = (0..n).map(|i| i % spec.classes).collect();
    rng::shuffle(&mut rng, &mut labels);

    let keyed = |k: usize| spec.paired_key.is_some() && k < 2;
    let blob_dims: Vec<usize> = spec
        .parties
        .iter()
        .enumerate()
        .map(|(k, p)| p.dim - spec.reserved_columns(k))
        .collect();

    let mut means = Vec::with_capacity(spec.parties.len());
    for (k, p) in spec.parties.iter().enumerate() {
        let d = blob_dims[k];
        let scale = spec.class_separation * p.informativeness;
        let mut data = Vec::with_capacity(groups * d);
        for _ in 0..groups {
            let dir: Vec<f64> = (0..d).map(|_| rng::standard_normal(&mut rng)).collect();
            let norm = libm::sqrt(dir.iter().map(|v| v * v).sum::<f64>()).max(1e-12);
            data.extend(dir.iter().map(|v| v / norm * scale));
        }
        means.push(Tensor::matrix(groups, d, data)?);
    }

    let mut parties: Vec<Tensor> = spec.parties.iter().map(|p| Tensor::zeros(n, p.dim)).collect();
    for (i, &y) in labels.iter().enumerate() {
        let mut g = if spec.paired_key.is_some() { y / 2 } else { y };
        if spec.shared_confusion > 0.0 && rng.random::<f64>() < spec.shared_confusion {
            g = rng.random_range(0..groups);
        }
        let key_signs = spec.paired_key.map(|_| {
            let b1: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let b2 = if y % 2 == 0 { b1 } else { -b1 };
            [b1, b2]
        });
        for (k, block) in parties.iter_mut().enumerate() {
            let d = blob_dims[k];
            let row = block.row_mut(i);
            for (j, v) in row.iter_mut().take(d).enumerate() {
                *v = means[k].get(g, j) + spec.noise_std * rng::standard_normal(&mut rng);
            }
            let mut col = d;
            if let (0, Some(h)) = (k, spec.parity_hint) {
                let parity = if y % 2 == 0 { 1.0 } else { -1.0 };
                row[col] = parity * h + spec.noise_std * rng::standard_normal(&mut rng);
                col += 1;
            }
            if keyed(k) {
                let sign = key_signs.expect("keyed")[k];
                let scale = spec.paired_key.expect("keyed");
                row[col] = sign * scale + spec.noise_std * rng::standard_normal(&mut rng);
            }
        }
    }

    let (train, test) = split_indices(n, spec.test_fraction, spec.seed);
    let mut ds = VerticalDataset::new(parties, labels, spec.classes, train, test)?;
    ds.generator = Some(GeneratorMeans {
        means,
        blob_dims,
        paired_key: spec.paired_key.is_some(),
    });
    Ok(ds)
}
