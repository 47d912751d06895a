use alloc::vec::Vec;

use super::protocol::{GradMessage, RepMessage};
use crate::error::{Error, Result};
use crate::nn::{ActivationTrace, GradientSet, Network};
use crate::tensor::Tensor;

/// How a passive party turns received gradients into parameter updates.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalUpdate {
    /// `theta <- theta - lr * g`.
    Sgd,
    /// Boosted local update used by the active model-completion attack.
    Boosted(BoostedUpdate),
}

/// Gradient scaling a passive party may apply to its own extractor updates.
///
/// With `adaptive`, every parameter's gradient is divided by the root of its
/// running second moment and rescaled by the network-wide RMS, so rarely
/// excited weights move as fast as busy ones; the result is then multiplied by
/// `boost`. Without `adaptive` the step is just `boost * lr * g`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostedUpdate {
    pub boost: f64,
    pub adaptive: bool,
    pub beta: f64,
    second_moment: Vec<f64>,
    steps: u64,
}

impl BoostedUpdate {
    pub fn new(boost: f64, adaptive: bool) -> Self {
        Self {
            boost,
            adaptive,
            beta: 0.99,
            second_moment: Vec::new(),
            steps: 0,
        }
    }

    fn apply(&mut self, net: &mut Network, grads: &GradientSet, lr: f64) -> Result<()> {
        let flat = grads.flat_params();
        if !self.adaptive {
            return apply_flat(net, &flat, lr * self.boost);
        }
        if self.second_moment.len() != flat.len() {
            self.second_moment = alloc::vec![0.0; flat.len()];
        }
        self.steps += 1;
        let correction = 1.0 - libm::pow(self.beta, self.steps as f64);
        for (v, g) in self.second_moment.iter_mut().zip(&flat) {
            *v = self.beta * *v + (1.0 - self.beta) * g * g;
        }
        let mean_v = self.second_moment.iter().sum::<f64>() / flat.len() as f64 / correction;
        let rms = libm::sqrt(mean_v);
        let scaled: Vec<f64> = flat
            .iter()
            .zip(&self.second_moment)
            .map(|(g, v)| {
                let denom = libm::sqrt(v / correction) + 1e-12;
                if rms == 0.0 {
                    0.0
                } else {
                    self.boost * g * rms / denom.max(rms * 1e-3)
                }
            })
            .collect();
        apply_flat(net, &scaled, lr)
    }
}

fn apply_flat(net: &mut Network, flat: &[f64], lr: f64) -> Result<()> {
    if flat.len() != net.param_count() {
        return Err(Error::Dimension("flat gradient length".into()));
    }
    for (i, g) in flat.iter().enumerate() {
        *net.flat_param_mut(i) -= lr * g;
    }
    Ok(())
}

/// A feature-owning party. Its only inputs are its own feature rows and the
/// [`GradMessage`]s addressed to it; nothing else is reachable from here.
#[derive(Debug, Clone)]
pub struct PassiveParty {
    id: usize,
    extractor: Network,
    lr: f64,
    update: LocalUpdate,
    pending: Option<(u64, ActivationTrace)>,
}

impl PassiveParty {
    pub(crate) fn new(id: usize, extractor: Network, lr: f64, update: LocalUpdate) -> Self {
        Self {
            id,
            extractor,
            lr,
            update,
            pending: None,
        }
    }

    /// Zero-based party index.
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn extractor(&self) -> &Network {
        &self.extractor
    }

    pub fn local_update(&self) -> &LocalUpdate {
        &self.update
    }

    /// Computes `H^k` for this round's rows and remembers the activations
    /// until a gradient (or the next round) arrives.
    pub fn upload(&mut self, round: u64, features: &Tensor) -> Result<RepMessage> {
        let trace = self.extractor.forward(features)?;
        let payload = trace.output().clone();
        self.pending = Some((round, trace));
        Ok(RepMessage {
            party: self.id,
            round,
            payload,
        })
    }

    /// Back-propagates a representation gradient through the extractor and
    /// takes one local step.
    pub fn receive(&mut self, msg: &GradMessage) -> Result<()> {
        let protocol = |detail: &str| Error::Protocol {
            party: self.id + 1,
            round: msg.round,
            detail: detail.into(),
        };
        if msg.party != self.id {
            return Err(protocol("gradient addressed to another party"));
        }
        let Some((round, trace)) = self.pending.take() else {
            return Err(protocol("gradient without a pending upload"));
        };
        if round != msg.round {
            return Err(protocol("gradient for a stale round"));
        }
        if !msg.payload.same_shape(trace.output()) {
            return Err(protocol("gradient shape differs from uploaded representation"));
        }
        let grads = self.extractor.backward(&trace, &msg.payload)?;
        match &mut self.update {
            LocalUpdate::Sgd => self.extractor.sgd_step(&grads, self.lr),
            LocalUpdate::Boosted(b) => b.apply(&mut self.extractor, &grads, self.lr),
        }
    }

    /// Representations for inference (no state kept).
    pub fn represent(&self, features: &Tensor) -> Result<Tensor> {
        self.extractor.predict(features)
    }
}
