//! Sequence and frame criteria with gradients w.r.t. network outputs.

use serde::Serialize;

use super::forward_backward::forward_backward;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ops::log_softmax;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize)]
pub struct LossReport {
    pub value: f64,
    /// d value / d input, same shape as the scored matrix.
    #[serde(skip)]
    pub grad: Tensor,
    pub num_logprob: f64,
    pub den_logprob: f64,
}

/// LF-MMI objective (to be maximized): `num_logprob - den_logprob`, with
/// gradient `k * (gamma_num - gamma_den)` w.r.t. the pseudo log-likelihoods.
/// An infeasible numerator yields [`Error::SkipUtterance`].
pub fn lfmmi_loss(num: &Graph, den: &Graph, loglik: &Tensor, k: f64) -> Result<LossReport> {
    let n = forward_backward(num, loglik, k).map_err(|e| match e {
        Error::Infeasible(m) | Error::SkipUtterance(m) => Error::SkipUtterance(m),
        Error::EmptyGraph => Error::SkipUtterance("empty numerator graph".into()),
        e => e,
    })?;
    let d = forward_backward(den, loglik, k)?;
    let mut grad = n.occupancy.gamma;
    for (g, dg) in grad.values_mut().iter_mut().zip(d.occupancy.gamma.values()) {
        *g = k * (*g - dg);
    }
    Ok(LossReport { value: n.total - d.total, grad, num_logprob: n.total, den_logprob: d.total })
}

/// Frame cross-entropy summed over frames (to be minimized); gradient
/// `softmax - onehot` w.r.t. the logits.
pub fn ce_loss(logits: &Tensor, targets: &[u32]) -> Result<LossReport> {
    let (frames, classes) = logits.dims2()?;
    if targets.len() != frames {
        return Err(Error::Shape(format!("{} targets for {frames} frames", targets.len())));
    }
    if let Some(&bad) = targets.iter().find(|&&c| c as usize >= classes) {
        return Err(Error::Config(format!("target {bad} outside [0, {classes})")));
    }
    let lp = log_softmax(logits)?;
    let mut value = 0.0;
    let mut grad = Tensor::zeros(&[frames, classes]);
    for (t, &c) in targets.iter().enumerate() {
        value -= lp.at2(t, c as usize);
        for (g, l) in grad.row_mut(t).iter_mut().zip(lp.row(t)) {
            *g = l.exp();
        }
        grad.row_mut(t)[c as usize] -= 1.0;
    }
    Ok(LossReport { value, grad, num_logprob: 0.0, den_logprob: 0.0 })
}

/// The minimized training criterion `-lfmmi + alpha * ce` and its parts.
#[derive(Clone, Debug, Serialize)]
pub struct JointReport {
    pub value: f64,
    pub lfmmi: f64,
    pub ce: f64,
    pub num_logprob: f64,
    pub den_logprob: f64,
    pub alpha: f64,
    /// d value / d chain outputs.
    #[serde(skip)]
    pub chain_grad: Tensor,
    /// d value / d CE logits.
    #[serde(skip)]
    pub ce_grad: Tensor,
}

#[allow(clippy::too_many_arguments)]
pub fn joint_loss(
    num: &Graph,
    den: &Graph,
    loglik: &Tensor,
    ce_logits: &Tensor,
    targets: &[u32],
    k: f64,
    alpha: f64,
) -> Result<JointReport> {
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
    }
    let m = lfmmi_loss(num, den, loglik, k)?;
    let c = ce_loss(ce_logits, targets)?;
    let mut chain_grad = m.grad;
    for g in chain_grad.values_mut() {
        *g = -*g;
    }
    let mut ce_grad = c.grad;
    for g in ce_grad.values_mut() {
        *g *= alpha;
    }
    Ok(JointReport {
        value: -m.value + alpha * c.value,
        lfmmi: m.value,
        ce: c.value,
        num_logprob: m.num_logprob,
        den_logprob: m.den_logprob,
        alpha,
        chain_grad,
        ce_grad,
    })
}

/// `coefficient * sum(theta^2)` and its gradient `2 * coefficient * theta`.
pub fn l2_penalty(params: &[f64], coefficient: f64) -> (f64, Vec<f64>) {
    let value = coefficient * params.iter().map(|p| p * p).sum::<f64>();
    (value, params.iter().map(|p| 2.0 * coefficient * p).collect())
}
