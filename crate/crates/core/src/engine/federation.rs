use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::dropout::{sample_mask, validate_dropout, DropoutMask};
use super::party::{BoostedUpdate, LocalUpdate, PassiveParty};
use super::protocol::{Direction, GradMessage, ProtocolEvent, ProtocolTrace, RepMessage};
use crate::data::{Batch, Split, VerticalDataset};
use crate::defenses::GradientDefense;
use crate::dimip::{mix_boundary_gradient, DimipConfig, DimipRoundLosses, DimipState};
use crate::error::{bail, Error, Result};
use crate::nn::{cross_entropy_logits, LayerSpec, Network};
use crate::rng::{self, Stream, StreamRng};
use crate::tensor::Tensor;

/// Largest federation for which the multi-head baseline is allowed
/// (`2^(K-1)` heads).
pub const MAX_MULTI_HEAD_PARTIES: usize = 4;

/// What the active party does to the gradients it sends back.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Defense {
    #[default]
    None,
    Gradient(GradientDefense),
    Dimip(DimipConfig),
}

impl Defense {
    pub fn name(&self) -> &'static str {
        match self {
            Defense::None => "none",
            Defense::Gradient(g) => g.name(),
            Defense::Dimip(_) => "dimip",
        }
    }
}

/// Boosted local training installed by passive party 2 (the active
/// model-completion attack).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmcHook {
    pub boost: f64,
    pub adaptive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    /// Feature width of each party, party 1 (active) first.
    pub party_dims: Vec<usize>,
    pub classes: usize,
    pub extractor_hidden: Vec<usize>,
    pub rep_dim: usize,
    pub head_hidden: Vec<usize>,
    pub lr: f64,
    /// Drop probability per passive party (parties 2..K).
    pub dropout_p: Vec<f64>,
    pub defense: Defense,
    pub multi_head: bool,
    pub amc: Option<AmcHook>,
    pub seed: u64,
}

impl FederationConfig {
    pub fn two_party(party_dims: [usize; 2], classes: usize, seed: u64) -> Self {
        Self {
            party_dims: party_dims.to_vec(),
            classes,
            extractor_hidden: vec![32],
            rep_dim: 16,
            head_hidden: vec![32],
            lr: 0.05,
            dropout_p: vec![0.0],
            defense: Defense::None,
            multi_head: false,
            amc: None,
            seed,
        }
    }

    pub fn parties(&self) -> usize {
        self.party_dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.parties();
        if k == 0 || self.party_dims.contains(&0) {
            bail!(Config, "need at least one party with positive feature width");
        }
        if self.classes < 2 || self.rep_dim == 0 {
            bail!(Config, "need >= 2 classes and a positive representation width");
        }
        if !(self.lr >= 0.0) {
            bail!(Config, "learning rate {} < 0", self.lr);
        }
        if self.dropout_p.len() != k - 1 {
            bail!(Config, "{} dropout probabilities for {} passive parties", self.dropout_p.len(), k - 1);
        }
        validate_dropout(&self.dropout_p)?;
        if self.multi_head && k > MAX_MULTI_HEAD_PARTIES {
            bail!(Config, "multi-head training needs 2^(K-1) heads; K = {k} exceeds {MAX_MULTI_HEAD_PARTIES}");
        }
        match &self.defense {
            Defense::None => {}
            Defense::Gradient(g) => g.validate()?,
            Defense::Dimip(d) => {
                d.validate()?;
                if k != 2 {
                    bail!(Config, "label protection is defined for two parties, got K = {k}");
                }
            }
        }
        if self.amc.is_some() && k < 2 {
            bail!(Config, "AMC needs a passive party");
        }
        Ok(())
    }
}

/// Which parties take part in an inference call. Bit `k` = zero-based party `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Presence(u32);

impl Presence {
    pub fn all(parties: usize) -> Self {
        Presence((1u32 << parties) - 1)
    }

    pub fn active_only() -> Self {
        Presence(1)
    }

    pub fn without(self, k: usize) -> Self {
        Presence(self.0 & !(1 << k))
    }

    pub fn contains(self, k: usize) -> bool {
        self.0 & (1 << k) != 0
    }

    /// Absent passive parties as a mask (bit `j` = party index `j + 1`).
    pub fn absent_mask(self, parties: usize) -> u32 {
        let all = Presence::all(parties).0;
        (!self.0 & all) >> 1
    }
}

/// Outcome of one training round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: u64,
    pub mask: DropoutMask,
    pub loss_c: f64,
    pub dimip: Option<DimipRoundLosses>,
}

/// Everything the simulated federation owns: the active party's extractor,
/// head(s) and optional auxiliary predictor, the passive parties, and the
/// random streams derived from the master seed.
#[derive(Debug, Clone)]
pub struct Federation {
    cfg: FederationConfig,
    extractor: Network,
    head: Network,
    /// Multi-head baseline: one extra head per non-empty absent-party mask.
    extra_heads: BTreeMap<u32, Network>,
    dimip: Option<DimipState>,
    passive: Vec<PassiveParty>,
    mask_rng: StreamRng,
    defense_rng: StreamRng,
    round: u64,
    trace: ProtocolTrace,
}

const HEAD_INIT_INDEX: u64 = 100;
const AUX_INIT_INDEX: u64 = 200;

fn extractor_net(cfg: &FederationConfig, k: usize) -> Result<Network> {
    let mut widths = vec![cfg.party_dims[k]];
    widths.extend_from_slice(&cfg.extractor_hidden);
    widths.push(cfg.rep_dim);
    let mut rng = rng::stream_with_index(cfg.seed, Stream::Init, k as u64);
    let mlp = Network::mlp(&widths, &mut rng)?;
    // representations are post-activation, so a zero block is the floor of
    // every unit rather than a typical value
    let mut layers = mlp.layers().to_vec();
    layers.push(LayerSpec::Relu);
    Network::from_parts(mlp.input_dim(), layers, mlp.params().to_vec())
}

fn head_net(cfg: &FederationConfig, index: u64) -> Result<Network> {
    let mut widths = vec![cfg.rep_dim * cfg.parties()];
    widths.extend_from_slice(&cfg.head_hidden);
    widths.push(cfg.classes);
    let mut rng = rng::stream_with_index(cfg.seed, Stream::Init, HEAD_INIT_INDEX + index);
    Network::mlp(&widths, &mut rng)
}

impl Federation {
    pub fn new(cfg: FederationConfig) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.parties();
        let extractor = extractor_net(&cfg, 0)?;
        let head = head_net(&cfg, 0)?;
        let mut passive = Vec::with_capacity(k - 1);
        for idx in 1..k {
            let update = match cfg.amc {
                Some(h) if idx == 1 => LocalUpdate::Boosted(BoostedUpdate::new(h.boost, h.adaptive)),
                _ => LocalUpdate::Sgd,
            };
            passive.push(PassiveParty::new(idx, extractor_net(&cfg, idx)?, cfg.lr, update));
        }
        let mut extra_heads = BTreeMap::new();
        if cfg.multi_head {
            for mask in 1..(1u32 << (k - 1)) {
                extra_heads.insert(mask, head_net(&cfg, u64::from(mask))?);
            }
        }
        let dimip = match &cfg.defense {
            Defense::Dimip(d) => {
                let mut init = rng::stream_with_index(cfg.seed, Stream::Init, AUX_INIT_INDEX);
                Some(DimipState::new(
                    d.clone(),
                    cfg.rep_dim,
                    cfg.classes,
                    &mut init,
                    rng::stream(cfg.seed, Stream::LabelShuffle),
                )?)
            }
            _ => None,
        };
        Ok(Self {
            mask_rng: rng::stream(cfg.seed, Stream::Mask),
            defense_rng: rng::stream(cfg.seed, Stream::DefenseNoise),
            cfg,
            extractor,
            head,
            extra_heads,
            dimip,
            passive,
            round: 0,
            trace: ProtocolTrace::default(),
        })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn parties(&self) -> usize {
        self.cfg.parties()
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn active_extractor(&self) -> &Network {
        &self.extractor
    }

    pub fn head(&self) -> &Network {
        &self.head
    }

    pub fn extra_heads(&self) -> &BTreeMap<u32, Network> {
        &self.extra_heads
    }

    /// Total number of heads (1, or `2^(K-1)` with the multi-head baseline).
    pub fn head_count(&self) -> usize {
        1 + self.extra_heads.len()
    }

    pub fn dimip(&self) -> Option<&DimipState> {
        self.dimip.as_ref()
    }

    /// Passive party by zero-based index (`k >= 1`).
    pub fn passive(&self, k: usize) -> &PassiveParty {
        &self.passive[k - 1]
    }

    pub fn protocol_trace(&self) -> &ProtocolTrace {
        &self.trace
    }

    pub fn clear_protocol_trace(&mut self) {
        self.trace.clear();
    }

    /// Training labels the protection step resamples `y'` from.
    pub fn set_label_pool(&mut self, pool: Vec<usize>) {
        if let Some(d) = &mut self.dimip {
            d.set_label_pool(pool);
        }
    }

    fn protocol_err(&self, party: usize, detail: &str) -> Error {
        Error::Protocol {
            party: party + 1,
            round: self.round,
            detail: detail.into(),
        }
    }

    /// One synchronous round on `batch` (party features in party order).
    pub fn train_round(&mut self, batch: &Batch) -> Result<RoundReport> {
        let k = self.parties();
        if batch.parties.len() != k {
            bail!(Config, "batch has {} party blocks, federation has {k}", batch.parties.len());
        }
        let round = self.round;
        let rows = batch.len();

        // (1) every party extracts; passive parties upload
        let active_trace = self.extractor.forward(&batch.parties[0])?;
        let mut uploads: Vec<RepMessage> = Vec::with_capacity(k - 1);
        for (j, party) in self.passive.iter_mut().enumerate() {
            let msg = party.upload(round, &batch.parties[j + 1])?;
            self.trace.push(ProtocolEvent::new(round, j + 1, Direction::Upload, &msg.payload));
            uploads.push(msg);
        }
        for msg in &uploads {
            if msg.payload.rows() != rows || msg.payload.cols() != self.cfg.rep_dim {
                return Err(self.protocol_err(msg.party, "representation shape mismatch"));
            }
        }

        // (2) party-wise dropout
        let mask = sample_mask(&self.cfg.dropout_p, &mut self.mask_rng);
        let zeros = Tensor::zeros(rows, self.cfg.rep_dim);
        let mut blocks: Vec<&Tensor> = vec![active_trace.output()];
        for msg in &uploads {
            blocks.push(if mask.is_dropped(msg.party) { &zeros } else { &msg.payload });
        }
        let joint = Tensor::concat_cols(&blocks)?;

        // protected party's representation and ascent on L_A come first
        let protect = self.dimip.is_some() && !mask.is_dropped(1);
        let mut loss_a = 0.0;
        if protect {
            let lr = self.dimip_lr();
            let dimip = self.dimip.as_mut().expect("checked");
            for step in 0..dimip.cfg.aux_steps {
                let la = dimip.fit_aux_step(&uploads[0].payload, &batch.labels, lr)?;
                if step == 0 {
                    loss_a = la;
                }
            }
        }

        // (3) head forward, task loss
        let head_trace = self.head.forward(&joint)?;
        let (loss_c, grad_logits) = cross_entropy_logits(head_trace.output(), &batch.labels)?;

        // (4) active-side gradients at the current parameters, then updates
        let head_grads = self.head.backward(&head_trace, &grad_logits)?;
        let widths = vec![self.cfg.rep_dim; k];
        let block_grads = head_grads.input.split_cols(&widths)?;
        let ext_grads = self.extractor.backward(&active_trace, &block_grads[0])?;
        self.head.sgd_step(&head_grads, self.cfg.lr)?;
        self.extractor.sgd_step(&ext_grads, self.cfg.lr)?;

        if !self.extra_heads.is_empty() {
            self.train_extra_heads(&blocks, &batch.labels)?;
        }

        // (5) boundary gradients to the unmasked passive parties
        let mut dimip_losses = None;
        for (j, msg) in uploads.iter().enumerate() {
            let party = j + 1;
            if mask.is_dropped(party) {
                continue;
            }
            let task_grad = &block_grads[party];
            let payload = if protect && party == 1 {
                let dimip = self.dimip.as_mut().expect("checked");
                let shuffled = dimip.sample_shuffled(rows)?;
                let (protection, mut losses) = dimip.protection_gradient(&msg.payload, &batch.labels, &shuffled)?;
                losses.loss_a = loss_a;
                dimip_losses = Some(losses);
                mix_boundary_gradient(task_grad, &protection, dimip.lambda())?
            } else {
                match &self.cfg.defense {
                    Defense::Gradient(d) => d.apply(task_grad, &mut self.defense_rng),
                    _ => task_grad.clone(),
                }
            };
            let reply = GradMessage {
                party,
                round,
                payload,
            };
            if !reply.payload.same_shape(&msg.payload) {
                return Err(self.protocol_err(party, "gradient shape differs from representation"));
            }
            self.trace.push(ProtocolEvent::new(round, party, Direction::Gradient, &reply.payload));
            self.passive[j].receive(&reply)?;
        }

        self.round += 1;
        Ok(RoundReport {
            round,
            mask,
            loss_c,
            dimip: dimip_losses,
        })
    }

    fn dimip_lr(&self) -> f64 {
        self.dimip
            .as_ref()
            .and_then(|d| d.cfg.aux_lr)
            .unwrap_or(self.cfg.lr)
    }

    /// Each extra head learns on a zero-imputed copy of the round's blocks.
    /// Its gradients stop at the head; extractors follow the all-present head.
    fn train_extra_heads(&mut self, blocks: &[&Tensor], labels: &[usize]) -> Result<()> {
        let lr = self.cfg.lr;
        for (&mask, head) in self.extra_heads.iter_mut() {
            let imputed: Vec<Tensor> = blocks
                .iter()
                .enumerate()
                .map(|(party, b)| {
                    if party >= 1 && mask & (1 << (party - 1)) != 0 {
                        Tensor::zeros(b.rows(), b.cols())
                    } else {
                        (*b).clone()
                    }
                })
                .collect();
            let refs: Vec<&Tensor> = imputed.iter().collect();
            let trace = head.forward(&Tensor::concat_cols(&refs)?)?;
            let (_, g) = cross_entropy_logits(trace.output(), labels)?;
            let grads = head.backward(&trace, &g)?;
            head.sgd_step(&grads, lr)?;
        }
        Ok(())
    }

    /// Runs one epoch of rounds over the training split.
    pub fn train_epoch(&mut self, ds: &VerticalDataset, batch_size: usize, epoch: u64) -> Result<Vec<RoundReport>> {
        if self.dimip.is_some() {
            self.set_label_pool(ds.split_labels(Split::Train));
        }
        ds.batches(Split::Train, batch_size, self.cfg.seed, epoch)
            .map(|b| self.train_round(&b))
            .collect()
    }

    /// Logits and predicted labels with absent parties' blocks set to zero.
    /// With the multi-head baseline the head trained for that absence pattern
    /// is used.
    pub fn predict(&self, parties: &[Tensor], present: Presence) -> Result<(Vec<usize>, Tensor)> {
        let k = self.parties();
        if parties.len() != k {
            bail!(Config, "{} feature blocks for {k} parties", parties.len());
        }
        if !present.contains(0) {
            bail!(Config, "the active party must be present");
        }
        let rows = parties[0].rows();
        let mut blocks = Vec::with_capacity(k);
        blocks.push(self.extractor.predict(&parties[0])?);
        for (j, party) in self.passive.iter().enumerate() {
            if present.contains(j + 1) {
                blocks.push(party.represent(&parties[j + 1])?);
            } else {
                blocks.push(Tensor::zeros(rows, self.cfg.rep_dim));
            }
        }
        let refs: Vec<&Tensor> = blocks.iter().collect();
        let joint = Tensor::concat_cols(&refs)?;
        let absent = present.absent_mask(k);
        let head = if absent == 0 {
            &self.head
        } else {
            self.extra_heads.get(&absent).unwrap_or(&self.head)
        };
        let logits = head.predict(&joint)?;
        Ok((argmax_rows(&logits), logits))
    }

    pub fn evaluate(&self, ds: &VerticalDataset, split: Split, present: Presence) -> Result<f64> {
        let idx = ds.indices(split);
        if idx.is_empty() {
            return Ok(0.0);
        }
        let parties: Vec<Tensor> = (0..self.parties()).map(|k| ds.split_party(k, split)).collect();
        let (pred, _) = self.predict(&parties, present)?;
        Ok(accuracy(&pred, &ds.split_labels(split)))
    }
}

/// Trains `rounds` rounds of the multi-head baseline (one head per
/// passive-party subset), cycling through epochs as needed.
pub fn train_multi_head(
    cfg: FederationConfig,
    ds: &VerticalDataset,
    rounds: u64,
    batch_size: usize,
) -> Result<Federation> {
    let mut cfg = cfg;
    cfg.multi_head = true;
    let mut fed = Federation::new(cfg)?;
    let mut epoch = 0;
    while fed.round() < rounds {
        for batch in ds.batches(Split::Train, batch_size, fed.cfg.seed, epoch) {
            if fed.round() >= rounds {
                break;
            }
            fed.train_round(&batch)?;
        }
        epoch += 1;
    }
    Ok(fed)
}

pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            t.row(r)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect()
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}
