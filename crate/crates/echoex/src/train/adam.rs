//! Adam with L2-coupled weight decay, plus global gradient clipping.

use crate::nn::ModelParams;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Per-parameter moment buffers, step counter and the current learning
/// rate.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub lr: f64,
}

impl OptimState {
    pub fn new(params: &ModelParams, lr: f64) -> OptimState {
        OptimState {
            m: params.tensors().map(|t| Tensor::zeros(t.shape())).collect(),
            v: params.tensors().map(|t| Tensor::zeros(t.shape())).collect(),
            step: 0,
            lr,
        }
    }
}

/// One Adam update.
///
/// Weight decay couples into the gradient (`g <- g + wd * p`), then
/// `m <- 0.9 m + 0.1 g`, `v <- 0.999 v + 0.001 g^2`, bias-corrected, and
/// `p <- p - lr * m_hat / (sqrt(v_hat) + 1e-8)`.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Tensor],
    state: &mut OptimState,
    weight_decay: f64,
) {
    assert_eq!(grads.len(), state.m.len(), "gradient/parameter count mismatch");
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for (i, (_, p)) in params.iter_mut().enumerate() {
        debug_assert_eq!(p.shape(), grads[i].shape());
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, pv) in p.data_mut().iter_mut().enumerate() {
            let g = grads[i].data()[j] + weight_decay * *pv;
            m[j] = BETA1 * m[j] + (1.0 - BETA1) * g;
            v[j] = BETA2 * v[j] + (1.0 - BETA2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *pv -= state.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Global L2-norm gradient clipping; returns the pre-clip norm.
pub fn clip_grad_l2(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let sq: f64 = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}
