//! SGD with momentum (differentiable or detached) and Adam.

use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One heavy-ball step over a parameter list:
/// `v' = μ·v + g`, `θ' = θ − lr·v'`.
///
/// `lr` and `momentum` are scalar nodes. With `differentiable` set the new
/// parameters and velocities stay connected to `grads`, `lr` and `momentum`;
/// otherwise they come back as detached constants.
pub fn sgd_momentum_step<T: Scalar>(
    g: &mut Graph<T>,
    params: &[Var],
    velocities: &[Var],
    grads: &[Var],
    lr: Var,
    momentum: Var,
    differentiable: bool,
) -> Result<(Vec<Var>, Vec<Var>)> {
    if params.len() != velocities.len() || params.len() != grads.len() {
        return Err(Error::Dimension {
            op: "sgd_momentum_step",
            left: alloc::vec![params.len()],
            right: alloc::vec![velocities.len(), grads.len()],
        });
    }
    for s in [lr, momentum] {
        if g.value(s).numel() != 1 {
            return Err(Error::Dimension {
                op: "sgd_momentum_step",
                left: g.shape(s).to_vec(),
                right: Vec::new(),
            });
        }
    }
    let mut new_params = Vec::with_capacity(params.len());
    let mut new_vels = Vec::with_capacity(params.len());
    for ((&p, &v), &grad) in params.iter().zip(velocities).zip(grads) {
        let shape = g.shape(p).to_vec();
        if g.shape(v) != shape.as_slice() || g.shape(grad) != shape.as_slice() {
            return Err(Error::Dimension {
                op: "sgd_momentum_step",
                left: shape,
                right: g.shape(grad).to_vec(),
            });
        }
        if differentiable {
            let mu = g.reshape(momentum, &[])?;
            let mu = g.broadcast_to(mu, &shape)?;
            let mv = g.mul(mu, v)?;
            let v_new = g.add(mv, grad)?;
            let step = g.reshape(lr, &[])?;
            let step = g.broadcast_to(step, &shape)?;
            let delta = g.mul(step, v_new)?;
            new_params.push(g.sub(p, delta)?);
            new_vels.push(v_new);
        } else {
            let (mut theta, mut vel) = (g.value(p).clone(), g.value(v).clone());
            let (lr_v, mu_v) = (g.value(lr).item(), g.value(momentum).item());
            sgd_momentum_update(&mut theta, &mut vel, g.value(grad), lr_v, mu_v)?;
            new_params.push(g.constant(theta));
            new_vels.push(g.constant(vel));
        }
    }
    Ok((new_params, new_vels))
}

/// In-place form of the same rule on plain tensors.
pub fn sgd_momentum_update<T: Scalar>(
    param: &mut Tensor<T>,
    velocity: &mut Tensor<T>,
    grad: &Tensor<T>,
    lr: T,
    momentum: T,
) -> Result<()> {
    if param.shape() != grad.shape() || velocity.shape() != grad.shape() {
        return Err(Error::Dimension {
            op: "sgd_momentum_update",
            left: param.shape().to_vec(),
            right: grad.shape().to_vec(),
        });
    }
    for ((p, v), &d) in param.data_mut().iter_mut().zip(velocity.data_mut()).zip(grad.data()) {
        *v = momentum * *v + d;
        *p = *p - lr * *v;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First/second moment buffers and the step counter for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shape: &[usize]) -> Self {
        AdamState { m: Tensor::zeros(shape), v: Tensor::zeros(shape), step: 0 }
    }
}

/// Bias-corrected Adam. Operates on plain tensors, never on the graph.
pub fn adam_step<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if param.shape() != grad.shape() || state.m.shape() != grad.shape() {
        return Err(Error::Dimension {
            op: "adam_step",
            left: param.shape().to_vec(),
            right: grad.shape().to_vec(),
        });
    }
    state.step += 1;
    let f = T::from_f64_lossy;
    let (b1, b2) = (f(cfg.beta1), f(cfg.beta2));
    let t = state.step as i32;
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let (lr, eps) = (f(cfg.lr), f(cfg.eps));
    let one = T::one();
    for (((p, m), v), &d) in param
        .data_mut()
        .iter_mut()
        .zip(state.m.data_mut())
        .zip(state.v.data_mut())
        .zip(grad.data())
    {
        *m = b1 * *m + (one - b1) * d;
        *v = b2 * *v + (one - b2) * d * d;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
