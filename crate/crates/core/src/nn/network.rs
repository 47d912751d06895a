use alloc::vec::Vec;

use rand::Rng;

use super::LayerSpec;
use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// Weights (`in_dim x out_dim`) and bias (`1 x out_dim`) of one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Gradient of a loss with respect to one dense layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Feed-forward stack of [`LayerSpec`]s with one [`DenseParams`] per dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_dim: usize,
    layers: Vec<LayerSpec>,
    params: Vec<DenseParams>,
}

/// Every intermediate activation of a forward pass; `activations[0]` is the input.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    activations: Vec<Tensor>,
}

impl ActivationTrace {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("trace holds at least the input")
    }

    pub fn into_output(mut self) -> Tensor {
        self.activations.pop().expect("trace holds at least the input")
    }

    pub fn input(&self) -> &Tensor {
        &self.activations[0]
    }
}

/// Parameter gradients mirroring a network, plus the gradient with respect to
/// the network's input batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<DenseGrad>,
    pub input: Tensor,
}

impl GradientSet {
    /// `self + k * other`, layer by layer (input gradients included).
    pub fn add_scaled(&mut self, other: &GradientSet, k: f64) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            bail!(State, "gradient sets of different depth");
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight = a.weight.axpby(1.0, &b.weight, k)?;
            a.bias = a.bias.axpby(1.0, &b.bias, k)?;
        }
        self.input = self.input.axpby(1.0, &other.input, k)?;
        Ok(())
    }

    /// All parameter gradient values in network order (weights then bias per layer).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend_from_slice(g.weight.data());
            out.extend_from_slice(g.bias.data());
        }
        out
    }
}

fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, in_dim: usize, out_dim: usize) -> Result<Tensor> {
    let a = libm::sqrt(6.0 / (in_dim + out_dim) as f64);
    let data = (0..in_dim * out_dim)
        .map(|_| rng.random_range(-a..=a))
        .collect();
    Tensor::matrix(in_dim, out_dim, data)
}

impl Network {
    /// Validates the layer chain and initializes dense layers with
    /// `U[-a, a]`, `a = sqrt(6 / (in + out))`, and zero biases.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, layers: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        Self::check_chain(input_dim, &layers)?;
        let mut params = Vec::new();
        for layer in &layers {
            if let LayerSpec::Dense { in_dim, out_dim } = *layer {
                params.push(DenseParams {
                    weight: glorot_uniform(rng, in_dim, out_dim)?,
                    bias: Tensor::zeros(1, out_dim),
                });
            }
        }
        Ok(Self {
            input_dim,
            layers,
            params,
        })
    }

    /// Dense layers of the given widths with ReLU between them (none after the last).
    pub fn mlp<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 {
            bail!(Config, "an MLP needs at least input and output widths");
        }
        let mut layers = Vec::new();
        for (i, w) in widths.windows(2).enumerate() {
            if i > 0 {
                layers.push(LayerSpec::Relu);
            }
            layers.push(LayerSpec::dense(w[0], w[1]));
        }
        Self::new(widths[0], layers, rng)
    }

    /// Reassembles a network from stored parameters, checking every shape.
    pub fn from_parts(input_dim: usize, layers: Vec<LayerSpec>, params: Vec<DenseParams>) -> Result<Self> {
        Self::check_chain(input_dim, &layers)?;
        let dense: Vec<(usize, usize)> = layers
            .iter()
            .filter_map(|l| match *l {
                LayerSpec::Dense { in_dim, out_dim } => Some((in_dim, out_dim)),
                _ => None,
            })
            .collect();
        if dense.len() != params.len() {
            bail!(Dimension, "{} dense layers but {} parameter blocks", dense.len(), params.len());
        }
        for (k, ((i, o), p)) in dense.iter().zip(&params).enumerate() {
            if p.weight.shape() != [*i, *o] || p.bias.shape() != [1, *o] {
                bail!(Dimension, "parameter block {k} does not match dense({i}, {o})");
            }
            p.weight.ensure_finite("weight")?;
            p.bias.ensure_finite("bias")?;
        }
        Ok(Self {
            input_dim,
            layers,
            params,
        })
    }

    fn check_chain(input_dim: usize, layers: &[LayerSpec]) -> Result<()> {
        if input_dim == 0 {
            bail!(Dimension, "input dim must be positive");
        }
        let mut width = input_dim;
        for (k, layer) in layers.iter().enumerate() {
            if let LayerSpec::Dense { in_dim, out_dim } = *layer {
                if in_dim != width || out_dim == 0 {
                    bail!(Dimension, "layer {k}: dense({in_dim}, {out_dim}) after width {width}");
                }
            }
            width = layer.out_dim(width);
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .iter()
            .fold(self.input_dim, |w, l| l.out_dim(w))
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[DenseParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [DenseParams] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// All parameters in network order (weights then bias per layer).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in &self.params {
            out.extend_from_slice(p.weight.data());
            out.extend_from_slice(p.bias.data());
        }
        out
    }

    /// Mutable access to the `idx`-th scalar of [`flat_params`](Self::flat_params).
    pub fn flat_param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for p in &mut self.params {
            let (w, b) = (p.weight.len(), p.bias.len());
            if idx < w {
                return &mut p.weight.data_mut()[idx];
            }
            idx -= w;
            if idx < b {
                return &mut p.bias.data_mut()[idx];
            }
            idx -= b;
        }
        panic!("parameter index out of range");
    }

    pub fn forward(&self, batch: &Tensor) -> Result<ActivationTrace> {
        if batch.shape().len() != 2 || batch.cols() != self.input_dim {
            bail!(
                Dimension,
                "batch shape {:?} does not match input dim {}",
                batch.shape(),
                self.input_dim
            );
        }
        batch.ensure_finite("network input")?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(batch.clone());
        let mut dense_idx = 0;
        for layer in &self.layers {
            let x = activations.last().expect("non-empty");
            let y = match layer {
                LayerSpec::Dense { .. } => {
                    let p = &self.params[dense_idx];
                    dense_idx += 1;
                    dense_forward(x, &p.weight, &p.bias)?
                }
                LayerSpec::Relu => x.map(|v| if v > 0.0 { v } else { 0.0 }),
                LayerSpec::SoftmaxOutput => super::softmax(x),
            };
            y.ensure_finite("layer output")?;
            activations.push(y);
        }
        Ok(ActivationTrace { activations })
    }

    /// Convenience: the output of [`forward`](Self::forward).
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.forward(batch)?.into_output())
    }

    pub fn backward(&self, trace: &ActivationTrace, grad_out: &Tensor) -> Result<GradientSet> {
        if trace.activations.len() != self.layers.len() + 1 {
            bail!(State, "trace depth {} for {} layers", trace.activations.len(), self.layers.len());
        }
        if trace.input().cols() != self.input_dim {
            bail!(State, "trace input width does not match network");
        }
        if !grad_out.same_shape(trace.output()) {
            bail!(
                Dimension,
                "grad_out shape {:?} vs output {:?}",
                grad_out.shape(),
                trace.output().shape()
            );
        }
        let mut grads: Vec<DenseGrad> = Vec::with_capacity(self.params.len());
        let mut g = grad_out.clone();
        let mut dense_idx = self.params.len();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.activations[k];
            let y = &trace.activations[k + 1];
            g = match layer {
                LayerSpec::Dense { .. } => {
                    dense_idx -= 1;
                    let p = &self.params[dense_idx];
                    if x.cols() != p.weight.rows() {
                        bail!(State, "trace activation {k} does not fit dense layer");
                    }
                    let (dx, dw, db) = dense_backward(x, &p.weight, &g)?;
                    grads.push(DenseGrad { weight: dw, bias: db });
                    dx
                }
                LayerSpec::Relu => {
                    let mut dx = g;
                    for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    dx
                }
                LayerSpec::SoftmaxOutput => {
                    let mut dx = g;
                    for r in 0..y.rows() {
                        let s = y.row(r);
                        let dot: f64 = dx.row(r).iter().zip(s).map(|(a, b)| a * b).sum();
                        for (d, &sv) in dx.row_mut(r).iter_mut().zip(s) {
                            *d = sv * (*d - dot);
                        }
                    }
                    dx
                }
            };
        }
        grads.reverse();
        Ok(GradientSet { layers: grads, input: g })
    }

    /// Plain SGD: `params <- params - lr * grads`.
    pub fn sgd_step(&mut self, grads: &GradientSet, lr: f64) -> Result<()> {
        if grads.layers.len() != self.params.len() {
            bail!(Dimension, "gradient set does not match network");
        }
        for (p, g) in self.params.iter_mut().zip(&grads.layers) {
            if !p.weight.same_shape(&g.weight) || !p.bias.same_shape(&g.bias) {
                bail!(Dimension, "gradient block shape mismatch");
            }
        }
        for (p, g) in self.params.iter_mut().zip(&grads.layers) {
            for (w, d) in p.weight.data_mut().iter_mut().zip(g.weight.data()) {
                *w -= lr * d;
            }
            for (b, d) in p.bias.data_mut().iter_mut().zip(g.bias.data()) {
                *b -= lr * d;
            }
        }
        Ok(())
    }

    /// Exact equality of every parameter bit.
    pub fn bit_eq(&self, other: &Network) -> bool {
        self.layers == other.layers
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.weight.bit_eq(&b.weight) && a.bias.bit_eq(&b.bias))
    }
}

fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (rows, n_in, n_out) = (x.rows(), w.rows(), w.cols());
    let mut out = Vec::with_capacity(rows * n_out);
    for r in 0..rows {
        let start = out.len();
        out.extend_from_slice(b.data());
        let acc = &mut out[start..];
        for (i, &xi) in x.row(r).iter().enumerate().take(n_in) {
            for (a, &wij) in acc.iter_mut().zip(w.row(i)) {
                *a += xi * wij;
            }
        }
    }
    Tensor::matrix(rows, n_out, out)
}

fn dense_backward(x: &Tensor, w: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (rows, n_in, n_out) = (x.rows(), w.rows(), w.cols());
    let mut dw = Tensor::zeros(n_in, n_out);
    let mut db = Tensor::zeros(1, n_out);
    let mut dx = Tensor::zeros(rows, n_in);
    for r in 0..rows {
        let gr = g.row(r);
        for (d, &gv) in db.data_mut().iter_mut().zip(gr) {
            *d += gv;
        }
        let xr = x.row(r);
        for i in 0..n_in {
            let xi = xr[i];
            let wi = w.row(i);
            let mut acc = 0.0;
            for ((dwij, &gv), &wij) in dw.row_mut(i).iter_mut().zip(gr).zip(wi) {
                *dwij += xi * gv;
                acc += gv * wij;
            }
            dx.set(r, i, acc);
        }
    }
    Ok((dx, dw, db))
}
