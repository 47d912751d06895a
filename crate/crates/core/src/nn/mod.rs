//! Exact-gradient dense networks.
//!
//! Just enough of a neural-network kernel to express every model in the
//! simulator: party extractors, the active party's head, the auxiliary label
//! predictor and the attack heads. Everything is `f64` so that analytic
//! gradients can be checked against central differences at tight tolerances.

mod gradcheck;
mod layer;
mod loss;
mod network;

pub use gradcheck::finite_diff_check;
pub use layer::LayerSpec;
pub use loss::{cross_entropy_logits, log_softmax, softmax};
pub use network::{ActivationTrace, DenseGrad, DenseParams, GradientSet, Network};
