//! Label protection by minimizing a sampled variational upper bound on the
//! mutual information between the passive party's representations and the
//! labels.
//!
//! The active party keeps an auxiliary predictor `g_psi` that tries to read
//! the label from `H^2`. Each round it
//!
//! 1. ascends `L_A = mean log g_psi(y | H^2)` in `psi`,
//! 2. trains its own extractor and head on the task loss `L_C`,
//! 3. draws one random label per row from the training pool and forms
//!    `L_R = mean -log g_psi(y' | H^2)`,
//! 4. sends `d/dH^2 [(1 - lambda) L_C + lambda L_A + lambda L_R]` back to the
//!    passive party instead of the plain task gradient.
//!
//! The passive party's side of the protocol is unchanged. The round itself is
//! driven by [`Federation`](crate::engine::Federation); this module holds the
//! state, the estimator and the gradient pieces.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Result};
use crate::nn::{cross_entropy_logits, log_softmax, Network};
use crate::rng::StreamRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct DimipConfig {
    /// Weight of the protection terms, in `[0, 1]`.
    pub lambda: f64,
    /// Hidden widths of `g_psi`; two hidden layers make a 3-layer MLP.
    pub aux_hidden: Vec<usize>,
    /// Step size for `psi`; `None` uses the federation learning rate.
    pub aux_lr: Option<f64>,
    /// `psi` ascent steps per round.
    pub aux_steps: usize,
    /// Include `L_R` in the boundary gradient (disable for the ablation).
    pub use_rep_loss: bool,
}

impl Default for DimipConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            aux_hidden: vec![64, 64],
            aux_lr: None,
            aux_steps: 1,
            use_rep_loss: true,
        }
    }
}

impl DimipConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            bail!(Config, "dimip lambda {} outside [0, 1]", self.lambda);
        }
        if let Some(lr) = self.aux_lr {
            if !(lr >= 0.0) {
                bail!(Config, "dimip aux lr {lr} < 0");
            }
        }
        Ok(())
    }
}

/// Per-round losses of the protected round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimipRoundLosses {
    /// `mean log g_psi(y | H^2)` before the `psi` step (always <= 0).
    pub loss_a: f64,
    /// `mean -log g_psi(y' | H^2)` with the updated `psi` (always >= 0).
    pub loss_r: f64,
    /// vCLUB-S estimate with the updated `psi` and this round's `y'`.
    pub vclub_s: f64,
}

/// Auxiliary predictor plus the label pool and stream it samples from.
#[derive(Debug, Clone)]
pub struct DimipState {
    pub(crate) cfg: DimipConfig,
    aux: Network,
    label_pool: Vec<usize>,
    rng: StreamRng,
}

/// `(1/B) sum_i [log q(y_i | h_i) - log q(y'_i | h_i)]` from row-wise log-probabilities.
pub fn vclub_s(log_probs: &Tensor, labels: &[usize], shuffled: &[usize]) -> Result<f64> {
    let (b, c) = (log_probs.rows(), log_probs.cols());
    if labels.len() != b || shuffled.len() != b {
        bail!(Dimension, "{b} rows but {} labels / {} shuffled", labels.len(), shuffled.len());
    }
    let mut total = 0.0;
    for (i, (&y, &ys)) in labels.iter().zip(shuffled).enumerate() {
        if y >= c || ys >= c {
            bail!(Input, "label out of range for {c} classes");
        }
        total += log_probs.get(i, y) - log_probs.get(i, ys);
    }
    Ok(total / b as f64)
}

/// `b` draws with replacement, uniform over the whole pool.
pub fn sample_shuffled<R: Rng + ?Sized>(pool: &[usize], b: usize, rng: &mut R) -> Result<Vec<usize>> {
    if pool.is_empty() {
        bail!(Input, "empty label pool");
    }
    Ok((0..b).map(|_| pool[rng.random_range(0..pool.len())]).collect())
}

impl DimipState {
    /// `rep_dim` is the protected party's representation width.
    pub fn new<R: Rng + ?Sized>(
        cfg: DimipConfig,
        rep_dim: usize,
        classes: usize,
        init_rng: &mut R,
        shuffle_rng: StreamRng,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut widths = vec![rep_dim];
        widths.extend_from_slice(&cfg.aux_hidden);
        widths.push(classes);
        Ok(Self {
            aux: Network::mlp(&widths, init_rng)?,
            cfg,
            label_pool: Vec::new(),
            rng: shuffle_rng,
        })
    }

    pub fn config(&self) -> &DimipConfig {
        &self.cfg
    }

    pub fn lambda(&self) -> f64 {
        self.cfg.lambda
    }

    pub fn aux_predictor(&self) -> &Network {
        &self.aux
    }

    pub fn set_label_pool(&mut self, pool: Vec<usize>) {
        self.label_pool = pool;
    }

    /// One ascent step on `L_A` (descent on the cross-entropy of `g_psi`)
    /// with the representations held constant. Returns `L_A` before the step.
    pub fn fit_aux_step(&mut self, reps: &Tensor, labels: &[usize], lr: f64) -> Result<f64> {
        let trace = self.aux.forward(reps)?;
        let (ce, grad) = cross_entropy_logits(trace.output(), labels)?;
        let grads = self.aux.backward(&trace, &grad)?;
        self.aux.sgd_step(&grads, lr)?;
        Ok(-ce)
    }

    pub fn sample_shuffled(&mut self, b: usize) -> Result<Vec<usize>> {
        sample_shuffled(&self.label_pool, b, &mut self.rng)
    }

    /// Gradient of `L_A + [L_R]` w.r.t. the representations at the current
    /// `psi`, together with the loss values and the vCLUB-S estimate.
    pub fn protection_gradient(
        &self,
        reps: &Tensor,
        labels: &[usize],
        shuffled: &[usize],
    ) -> Result<(Tensor, DimipRoundLosses)> {
        let trace = self.aux.forward(reps)?;
        let logits = trace.output();
        let (ce_true, g_true) = cross_entropy_logits(logits, labels)?;
        let (ce_shuf, g_shuf) = cross_entropy_logits(logits, shuffled)?;
        let vclub = vclub_s(&log_softmax(logits), labels, shuffled)?;
        // d L_A / d logits = -d CE(y) / d logits
        let mut grad_logits = g_true.scale(-1.0);
        if self.cfg.use_rep_loss {
            grad_logits = grad_logits.axpby(1.0, &g_shuf, 1.0)?;
        }
        let grads = self.aux.backward(&trace, &grad_logits)?;
        Ok((
            grads.input,
            DimipRoundLosses {
                loss_a: -ce_true,
                loss_r: ce_shuf,
                vclub_s: vclub,
            },
        ))
    }
}

/// `(1 - lambda) * task + lambda * protection`, elementwise.
pub fn mix_boundary_gradient(task: &Tensor, protection: &Tensor, lambda: f64) -> Result<Tensor> {
    if !task.same_shape(protection) {
        bail!(Dimension, "task gradient {:?} vs protection gradient {:?}", task.shape(), protection.shape());
    }
    // the endpoints pass one side through untouched (0 * g can flip a signed
    // zero, which would break bit-level reproducibility against plain training)
    if lambda == 0.0 {
        return Ok(task.clone());
    }
    if lambda == 1.0 {
        return Ok(protection.clone());
    }
    task.axpby(1.0 - lambda, protection, lambda)
}
