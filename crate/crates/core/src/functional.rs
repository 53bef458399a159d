//! Differentiable layers composed from graph primitives.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ConvGeometry, Tensor};

/// `input[b, in] · weightᵀ + bias`, with `weight[out, in]`.
pub fn linear<T: Scalar>(g: &mut Graph<T>, input: Var, weight: Var, bias: Var) -> Result<Var> {
    let (xs, ws, bs) = (g.shape(input), g.shape(weight), g.shape(bias));
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bs != [ws[0]] {
        return Err(Error::Dimension {
            op: "linear",
            left: xs.to_vec(),
            right: ws.to_vec(),
        });
    }
    let out_shape = [xs[0], ws[0]];
    let wt = g.transpose(weight)?;
    let y = g.matmul(input, wt)?;
    let b = g.broadcast_to(bias, &out_shape)?;
    g.add(y, b)
}

/// Cross-correlation of `input[b, cin, h, w]` with `kernel[cout, cin, k, k]`.
pub fn conv2d<T: Scalar>(
    g: &mut Graph<T>,
    input: Var,
    kernel: Var,
    bias: Var,
    stride: usize,
    padding: usize,
) -> Result<Var> {
    let (xs, ks) = (g.shape(input).to_vec(), g.shape(kernel).to_vec());
    if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] || ks[2] != ks[3] || g.shape(bias) != [ks[0]]
    {
        return Err(Error::Dimension { op: "conv2d", left: xs, right: ks });
    }
    let geom = ConvGeometry::new(xs[1], xs[2], xs[3], ks[2], stride, padding)?;
    let cols = g.im2col(input, geom)?;
    let wmat = g.reshape(kernel, &[ks[0], geom.patch_len()])?;
    let y = g.bmm_left(wmat, cols)?;
    let y = g.reshape(y, &[xs[0], ks[0], geom.out_h, geom.out_w])?;
    let b = g.reshape(bias, &[1, ks[0], 1, 1])?;
    let b = g.broadcast_to(b, &[xs[0], ks[0], geom.out_h, geom.out_w])?;
    g.add(y, b)
}

/// Shape of per-channel statistics for a `[b, c]` or `[b, c, h, w]` input.
fn stat_shape(shape: &[usize]) -> Result<Vec<usize>> {
    match shape.len() {
        2 => Ok(vec![1, shape[1]]),
        4 => Ok(vec![1, shape[1], 1, 1]),
        _ => Err(Error::Dimension { op: "batchnorm", left: shape.to_vec(), right: vec![2, 4] }),
    }
}

/// Batch statistics produced by a training-mode batchnorm call (biased variance).
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

/// Training-mode batch normalization. The batch mean and variance stay in
/// the graph, so gradients flow through the normalization statistics.
pub fn batchnorm_train<T: Scalar>(
    g: &mut Graph<T>,
    input: Var,
    gamma: Var,
    beta: Var,
    eps: T,
) -> Result<(Var, BatchStats<T>)> {
    let shape = g.shape(input).to_vec();
    let stat = stat_shape(&shape)?;
    let channels = shape[1];
    if g.shape(gamma) != [channels] || g.shape(beta) != [channels] {
        return Err(Error::Dimension {
            op: "batchnorm",
            left: shape,
            right: g.shape(gamma).to_vec(),
        });
    }
    let count = shape.iter().product::<usize>() / channels.max(1);
    if count < 2 {
        return Err(Error::DegenerateVariance { op: "batchnorm", count });
    }
    let inv_n = T::one() / T::from_f64_lossy(count as f64);

    let sum = g.sum_to(input, &stat)?;
    let mean = g.scale(sum, inv_n);
    let mean_b = g.broadcast_to(mean, &shape)?;
    let centered = g.sub(input, mean_b)?;
    let sq = g.mul(centered, centered)?;
    let sq_sum = g.sum_to(sq, &stat)?;
    let var = g.scale(sq_sum, inv_n);
    let stats = BatchStats {
        mean: g.value(mean).reshape(&[channels])?,
        var: g.value(var).reshape(&[channels])?,
    };
    let shifted = g.affine(var, T::one(), eps);
    let inv_std = g.powf(shifted, T::from_f64_lossy(-0.5));
    let inv_std = g.broadcast_to(inv_std, &shape)?;
    let normed = g.mul(centered, inv_std)?;
    Ok((scale_shift(g, normed, gamma, beta, &stat, &shape)?, stats))
}

/// Evaluation-mode batch normalization with fixed statistics.
pub fn batchnorm_eval<T: Scalar>(
    g: &mut Graph<T>,
    input: Var,
    gamma: Var,
    beta: Var,
    stats: &BatchStats<T>,
    eps: T,
) -> Result<Var> {
    let shape = g.shape(input).to_vec();
    let stat = stat_shape(&shape)?;
    let mean = g.constant(stats.mean.reshape(&stat)?);
    let inv_std = stats.var.map(|v| (v + eps).powf(T::from_f64_lossy(-0.5))).reshape(&stat)?;
    let inv_std = g.constant(inv_std);
    let mean = g.broadcast_to(mean, &shape)?;
    let inv_std = g.broadcast_to(inv_std, &shape)?;
    let centered = g.sub(input, mean)?;
    let normed = g.mul(centered, inv_std)?;
    scale_shift(g, normed, gamma, beta, &stat, &shape)
}

fn scale_shift<T: Scalar>(
    g: &mut Graph<T>,
    normed: Var,
    gamma: Var,
    beta: Var,
    stat: &[usize],
    shape: &[usize],
) -> Result<Var> {
    let gm = g.reshape(gamma, stat)?;
    let gm = g.broadcast_to(gm, shape)?;
    let bt = g.reshape(beta, stat)?;
    let bt = g.broadcast_to(bt, shape)?;
    let y = g.mul(normed, gm)?;
    g.add(y, bt)
}

/// Spatial mean: `[b, c, h, w]` → `[b, c]`.
pub fn global_avg_pool<T: Scalar>(g: &mut Graph<T>, input: Var) -> Result<Var> {
    let shape = g.shape(input).to_vec();
    if shape.len() != 4 || shape[2] * shape[3] == 0 {
        return Err(Error::Dimension { op: "global_avg_pool", left: shape, right: vec![4] });
    }
    let s = g.sum_to(input, &[shape[0], shape[1], 1, 1])?;
    let s = g.reshape(s, &[shape[0], shape[1]])?;
    Ok(g.scale(s, T::one() / T::from_f64_lossy((shape[2] * shape[3]) as f64)))
}

/// Batch-mean of `−log softmax(logits)[label]`.
pub fn softmax_cross_entropy<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    labels: &[usize],
) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() || shape[0] == 0 {
        return Err(Error::Dimension {
            op: "softmax_cross_entropy",
            left: shape,
            right: vec![labels.len()],
        });
    }
    let (batch, classes) = (shape[0], shape[1]);
    let mut onehot = Tensor::zeros(&shape);
    for (i, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Label { index: i, label, classes });
        }
        onehot.data_mut()[i * classes + label] = T::one();
    }
    let onehot = g.constant(onehot);
    let logp = g.log_softmax(logits)?;
    let picked = g.mul(logp, onehot)?;
    let total = g.sum_all(picked);
    Ok(g.scale(total, -T::one() / T::from_f64_lossy(batch as f64)))
}

/// Row-wise softmax probabilities of a logits tensor (no graph).
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(crate::tensor::kernels::log_softmax(logits)?.map(T::exp))
}
