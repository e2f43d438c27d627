//! Reverse-mode derivatives for the training path, the finite-difference
//! oracle that checks them, and momentum SGD.
//!
//! Backward passes are wired by hand per operation; there is no tape.

mod check;
mod ops;

pub use check::{gradcheck_filtered, gradcheck_suite, registry, GradCase};
pub use ops::{
    causal_conv, causal_conv_backward, depthwise_conv_backward, rms_norm, rms_norm_backward, silu, silu_backward,
    softmax_cross_entropy, softmax_rows_backward,
};

use serde::{Deserialize, Serialize};

use crate::error::{MixerError, Result};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-5;

/// A value with an additive gradient accumulator of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Dual {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Dual {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Dual { value, grad }
    }

    pub fn accumulate(&mut self, g: &Tensor) -> Result<()> {
        self.grad.add_assign(g)
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub op: String,
    pub max_rel_error: f64,
    pub step: f64,
    pub pass: bool,
}

impl GradReport {
    pub fn new(op: impl Into<String>, max_rel_error: f64, step: f64) -> Self {
        GradReport {
            op: op.into(),
            max_rel_error,
            step,
            pass: max_rel_error <= GRAD_TOL,
        }
    }
}

/// Central differences `(f(θ + h e_k) − f(θ − h e_k)) / 2h` for every
/// coordinate `k`.
pub fn finite_difference_grad(mut f: impl FnMut(&Tensor) -> Result<f64>, theta: &Tensor, h: f64) -> Result<Tensor> {
    let mut probe = theta.clone();
    let mut grad = Tensor::zeros(theta.shape());
    for k in 0..theta.len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[k] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[k] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(MixerError::NonFinite(format!("objective at coordinate {k}")));
        }
        grad.data_mut()[k] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// `‖a − n‖∞ / max(‖n‖∞, ‖a‖∞)`, zero when both vanish.
pub fn grad_rel_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let scale = numeric.max_abs().max(analytic.max_abs());
    if scale == 0.0 {
        return 0.0;
    }
    let diff = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    diff / scale
}

/// Classic momentum: `v ← μ v + g`, `θ ← θ − lr · v`.
pub fn sgd_step(params: &mut [&mut Tensor], grads: &[Tensor], velocity: &mut Vec<Tensor>, lr: f64, momentum: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(MixerError::shape("sgd_step", "one gradient per parameter"));
    }
    if velocity.is_empty() {
        *velocity = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        if p.shape() != g.shape() || v.shape() != g.shape() {
            return Err(MixerError::shape(
                "sgd_step",
                format!("parameter {:?} vs gradient {:?}", p.shape(), g.shape()),
            ));
        }
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = momentum * *vv + gv;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}
