use crate::error::{numeric, usage, Result};
use crate::scalar::Scalar;

use super::{Parameters, TrainConfig};

/// First/second moment accumulators, one per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<P: Parameters<T> + ?Sized>(params: &P) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self {
            first_moment: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected ADAM update, in place:
/// `θ ← θ − lr · m̂ / (√v̂ + ε)`.
pub fn adam_step<T: Scalar, P: Parameters<T> + ?Sized>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState<T>,
    cfg: &TrainConfig<T>,
) -> Result<()> {
    let grads = grads.tensors();
    let mut params = params.tensors_mut();
    if grads.len() != params.len() || state.first_moment.len() != params.len() {
        return Err(usage("parameter, gradient and optimizer state shapes disagree"));
    }
    for ((p, g), m) in params.iter().zip(&grads).zip(&state.first_moment) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(usage("parameter, gradient and optimizer state shapes disagree"));
        }
    }
    if grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
        return Err(numeric("non-finite gradient entry"));
    }

    state.step += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let one = T::one();
    let t = state.step as i32;
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(&grads).zip(state.first_moment.iter_mut()).zip(state.second_moment.iter_mut()) {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] = p[i] - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}
