//! Models trained by one party on its own features.
//!
//! Used twice: the active party's "go it alone" reference that quit-time
//! accuracy is compared with, and a passive party's scratch-trained model
//! with full label access (the leakage ceiling for completion attacks).

use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Split, VerticalDataset};
use crate::engine::{accuracy, argmax_rows};
use crate::error::Result;
use crate::nn::{cross_entropy_logits, LayerSpec, Network};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

/// Architecture and budget of a single-party model.
#[derive(Debug, Clone, PartialEq)]
pub struct SinglePartyConfig {
    pub extractor_hidden: Vec<usize>,
    pub rep_dim: usize,
    pub head_hidden: Vec<usize>,
    pub lr: f64,
    pub epochs: u64,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SinglePartyModel {
    pub party: usize,
    pub extractor: Network,
    pub head: Network,
}

impl SinglePartyModel {
    pub fn predict(&self, features: &Tensor) -> Result<Vec<usize>> {
        let reps = self.extractor.predict(features)?;
        Ok(argmax_rows(&self.head.predict(&reps)?))
    }

    pub fn evaluate(&self, ds: &VerticalDataset, split: Split) -> Result<f64> {
        let pred = self.predict(&ds.split_party(self.party, split))?;
        Ok(accuracy(&pred, &ds.split_labels(split)))
    }
}

/// Trains extractor + private head on party `party`'s block with all labels.
pub fn train_single_party(ds: &VerticalDataset, party: usize, cfg: &SinglePartyConfig) -> Result<SinglePartyModel> {
    // distinct init streams from the federation's networks
    let base = 300 + 10 * party as u64;
    let mut widths = vec![ds.party(party).cols()];
    widths.extend_from_slice(&cfg.extractor_hidden);
    widths.push(cfg.rep_dim);
    let mlp = Network::mlp(&widths, &mut rng::stream_with_index(cfg.seed, Stream::Init, base))?;
    let mut layers = mlp.layers().to_vec();
    layers.push(LayerSpec::Relu);
    let mut extractor = Network::from_parts(mlp.input_dim(), layers, mlp.params().to_vec())?;

    let mut head_widths = vec![cfg.rep_dim];
    head_widths.extend_from_slice(&cfg.head_hidden);
    head_widths.push(ds.classes());
    let mut head = Network::mlp(&head_widths, &mut rng::stream_with_index(cfg.seed, Stream::Init, base + 1))?;

    for epoch in 0..cfg.epochs {
        for batch in ds.batches(Split::Train, cfg.batch_size, cfg.seed, epoch) {
            let ext_trace = extractor.forward(&batch.parties[party])?;
            let head_trace = head.forward(ext_trace.output())?;
            let (_, g) = cross_entropy_logits(head_trace.output(), &batch.labels)?;
            let hg = head.backward(&head_trace, &g)?;
            let eg = extractor.backward(&ext_trace, &hg.input)?;
            head.sgd_step(&hg, cfg.lr)?;
            extractor.sgd_step(&eg, cfg.lr)?;
        }
    }
    Ok(SinglePartyModel { party, extractor, head })
}
