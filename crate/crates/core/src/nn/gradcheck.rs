use crate::error::{bail, Result};
use crate::tensor::Tensor;

use super::Network;

/// Compares backprop against central differences for every parameter and
/// every input entry.
///
/// `loss` maps the network output to `(loss, dloss/doutput)`. Returns the
/// largest `|analytic - numeric| / max(1, |analytic|)`.
pub fn finite_diff_check<F>(net: &Network, batch: &Tensor, loss: F, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<(f64, Tensor)>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        bail!(Input, "eps {eps} outside [1e-7, 1e-3]");
    }
    let trace = net.forward(batch)?;
    let (_, grad_out) = loss(trace.output())?;
    let analytic = net.backward(&trace, &grad_out)?;

    let eval = |n: &Network, x: &Tensor| -> Result<f64> { Ok(loss(&n.predict(x)?)?.0) };
    let rel = |a: f64, num: f64| libm::fabs(a - num) / libm::fabs(a).max(1.0);

    let mut worst = 0.0f64;
    let flat = analytic.flat_params();
    let mut probe = net.clone();
    for (idx, &a) in flat.iter().enumerate() {
        let orig = *probe.flat_param_mut(idx);
        *probe.flat_param_mut(idx) = orig + eps;
        let up = eval(&probe, batch)?;
        *probe.flat_param_mut(idx) = orig - eps;
        let down = eval(&probe, batch)?;
        *probe.flat_param_mut(idx) = orig;
        worst = worst.max(rel(a, (up - down) / (2.0 * eps)));
    }
    let mut x = batch.clone();
    for idx in 0..x.len() {
        let orig = x.data()[idx];
        x.data_mut()[idx] = orig + eps;
        let up = eval(net, &x)?;
        x.data_mut()[idx] = orig - eps;
        let down = eval(net, &x)?;
        x.data_mut()[idx] = orig;
        worst = worst.max(rel(analytic.input.data()[idx], (up - down) / (2.0 * eps)));
    }
    Ok(worst)
}
