//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use super::tensor::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates per parameter tensor plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn for_params(params: &[Vec<T>]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            t: 0,
        }
    }
}

/// One Adam update over every parameter tensor.
///
/// `names` labels the tensors for divergence reports. Gradients are checked
/// before anything is modified, so a failed step leaves the state untouched.
pub fn adam_step<T: Scalar>(
    params: &mut [Vec<T>],
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    lr: f64,
    hyper: AdamHyper,
    names: &[String],
) -> Result<()> {
    if params.len() != grads.len()
        || params.len() != state.m.len()
        || params.iter().zip(grads).any(|(p, g)| p.len() != g.len())
        || params.iter().zip(&state.m).any(|(p, m)| p.len() != m.len())
    {
        return Err(Error::Shape {
            expected: params.iter().map(Vec::len).collect(),
            actual: grads.iter().map(Vec::len).collect(),
        });
    }
    let step = state.t + 1;
    for (i, g) in grads.iter().enumerate() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                layer: names.get(i).cloned().unwrap_or_else(|| format!("param{i}")),
                epoch: 0,
                step: step as usize,
            });
        }
    }
    state.t = step;

    let b1 = T::of(hyper.beta1);
    let b2 = T::of(hyper.beta2);
    let one = T::one();
    let c1 = T::of(1.0 - hyper.beta1.powi(step.min(i32::MAX as u64) as i32));
    let c2 = T::of(1.0 - hyper.beta2.powi(step.min(i32::MAX as u64) as i32));
    let lr = T::of(lr);
    let eps = T::of(hyper.epsilon);

    for (i, ((p, g), (m, v))) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        .enumerate()
    {
        for (((pj, &gj), mj), vj) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mj = b1 * *mj + (one - b1) * gj;
            *vj = b2 * *vj + (one - b2) * gj * gj;
            let m_hat = *mj / c1;
            let v_hat = *vj / c2;
            *pj -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                layer: names.get(i).cloned().unwrap_or_else(|| format!("param{i}")),
                epoch: 0,
                step: step as usize,
            });
        }
    }
    Ok(())
}
