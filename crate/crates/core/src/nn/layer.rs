/// One stage of a [`Network`](super::Network).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// Affine map `x W + b` with `W: in_dim x out_dim`.
    Dense { in_dim: usize, out_dim: usize },
    Relu,
    /// Row-wise softmax. Only used for reporting probabilities; training goes
    /// through [`cross_entropy_logits`](super::cross_entropy_logits).
    SoftmaxOutput,
}

impl LayerSpec {
    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec::Dense { in_dim, out_dim }
    }

    /// Output width given the input width.
    pub fn out_dim(&self, input: usize) -> usize {
        match *self {
            LayerSpec::Dense { out_dim, .. } => out_dim,
            LayerSpec::Relu | LayerSpec::SoftmaxOutput => input,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => in_dim * out_dim + out_dim,
            _ => 0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::SoftmaxOutput => "softmax",
        }
    }
}
