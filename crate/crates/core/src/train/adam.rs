use super::TrainError;
use crate::autodiff::{Real, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F: Real = f32> {
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub t: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &[Tensor<F>]) -> Self {
        let zeros = || params.iter().map(|p| vec![F::zero(); p.numel()]).collect();
        Self { m: zeros(), v: zeros(), t: 0 }
    }
}

/// One Adam update with bias-corrected moments. Weight decay is decoupled:
/// each parameter first shrinks by `lr · weight_decay · p`.
pub fn adam_step<F: Real>(
    params: &mut [Tensor<F>],
    grads: &[Vec<F>],
    state: &mut AdamState<F>,
    lr: f64,
    weight_decay: f64,
) -> Result<(), TrainError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} parameter tensors, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = (0..params.len()).find(|&i| grads[i].len() != params[i].numel() || state.m[i].len() != grads[i].len()) {
        return Err(TrainError::ShapeMismatch(format!(
            "tensor {i}: {} values, {} gradient entries",
            params[i].numel(),
            grads[i].len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (F::of(BETA1), F::of(BETA2));
    let c1 = F::of(1.0 / (1.0 - BETA1.powi(t)));
    let c2 = F::of(1.0 / (1.0 - BETA2.powi(t)));
    let (lr_f, decay, eps) = (F::of(lr), F::of(lr * weight_decay), F::of(ADAM_EPS));
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (F::one() - b1) * g;
            *v = b2 * *v + (F::one() - b2) * g * g;
            let step = lr_f * (*m * c1) / ((*v * c2).sqrt() + eps);
            *p = *p - decay * *p - step;
        }
    }
    Ok(())
}
