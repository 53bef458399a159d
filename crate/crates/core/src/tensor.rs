//! Dense row-major tensors and the raw numeric kernels the autodiff graph is
//! built on. Nothing in here tracks gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                left: shape.to_vec(),
                right: vec![data.len()],
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(numel(shape), data.len(), "shape {shape:?} does not match data length");
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![value; numel(shape)] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: Vec::new(), data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Self {
        Tensor { shape: shape.to_vec(), data: (0..numel(shape)).map(f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() {
            return Err(Error::Dimension {
                op: "reshape",
                left: self.shape.clone(),
                right: shape.to_vec(),
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data.clone() })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }

    /// Largest absolute elementwise difference; `None` if the shapes differ.
    pub fn max_abs_diff(&self, other: &Self) -> Option<T> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())),
        )
    }
}

/// Geometry of a 2-d convolution over `[batch, channels, height, width]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let out = |n: usize| -> Option<usize> {
            let padded = n + 2 * padding;
            if stride == 0 || kernel == 0 || padded < kernel {
                None
            } else {
                Some((padded - kernel) / stride + 1)
            }
        };
        match (out(height), out(width)) {
            (Some(out_h), Some(out_w)) if out_h >= 1 && out_w >= 1 => Ok(ConvGeometry {
                channels,
                height,
                width,
                kernel,
                stride,
                padding,
                out_h,
                out_w,
            }),
            _ => Err(Error::Dimension {
                op: "conv2d",
                left: vec![channels, height, width],
                right: vec![kernel, kernel, stride, padding],
            }),
        }
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Raw kernels. Callers are responsible for shape checks unless noted.
pub mod kernels {
    use super::*;

    fn dim_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
        Error::Dimension { op, left: a.to_vec(), right: b.to_vec() }
    }

    pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
            return Err(dim_err("matmul", &a.shape, &b.shape));
        }
        let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            (&a.data, k as isize, 1),
            (&b.data, n as isize, 1),
            (&mut out, n as isize, 1),
            false,
        );
        Ok(Tensor { shape: vec![m, n], data: out })
    }

    pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
        if a.rank() != 2 {
            return Err(dim_err("transpose", &a.shape, &[2]));
        }
        let (r, c) = (a.shape[0], a.shape[1]);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = a.data[i * c + j];
            }
        }
        Ok(Tensor { shape: vec![c, r], data: out })
    }

    /// Per-axis strides of `small` when read through the broadcast to `big`
    /// (right-aligned, size-1 axes repeat). `None` if incompatible.
    fn broadcast_strides(small: &[usize], big: &[usize]) -> Option<Vec<usize>> {
        if small.len() > big.len() {
            return None;
        }
        let lead = big.len() - small.len();
        let mut strides = vec![0; big.len()];
        let mut acc = 1;
        for (i, &d) in small.iter().enumerate().rev() {
            let bd = big[lead + i];
            if d == bd {
                strides[lead + i] = if d == 1 { 0 } else { acc };
            } else if d != 1 {
                return None;
            }
            acc *= d;
        }
        Some(strides)
    }

    /// Walks every element of `big` in row-major order, handing `f` the flat
    /// index into `big` and the matching flat index into the broadcast `small`.
    fn walk(big: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize)) {
        let total = numel(big);
        if total == 0 {
            return;
        }
        if big.is_empty() {
            f(0, 0);
            return;
        }
        let last = big.len() - 1;
        let inner = big[last];
        let inner_stride = strides[last];
        let mut idx = vec![0usize; big.len()];
        let mut base = 0usize;
        let mut flat = 0usize;
        while flat < total {
            for i in 0..inner {
                f(flat + i, base + i * inner_stride);
            }
            flat += inner;
            // odometer over the outer axes
            let mut axis = last;
            while axis > 0 {
                axis -= 1;
                idx[axis] += 1;
                base += strides[axis];
                if idx[axis] < big[axis] {
                    break;
                }
                base -= strides[axis] * big[axis];
                idx[axis] = 0;
            }
        }
    }

    pub fn broadcast_to<T: Scalar>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
        if x.shape == shape {
            return Ok(x.clone());
        }
        let strides = broadcast_strides(&x.shape, shape)
            .ok_or_else(|| dim_err("broadcast_to", &x.shape, shape))?;
        let mut out = vec![T::zero(); numel(shape)];
        walk(shape, &strides, |o, s| out[o] = x.data[s]);
        Ok(Tensor { shape: shape.to_vec(), data: out })
    }

    /// Adjoint of [`broadcast_to`]: sums `x` down to `shape`.
    pub fn sum_to<T: Scalar>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
        if x.shape == shape {
            return Ok(x.clone());
        }
        let strides = broadcast_strides(shape, &x.shape)
            .ok_or_else(|| dim_err("sum_to", &x.shape, shape))?;
        let mut out = vec![T::zero(); numel(shape)];
        walk(&x.shape, &strides, |i, s| out[s] = out[s] + x.data[i]);
        Ok(Tensor { shape: shape.to_vec(), data: out })
    }

    /// `[b, c, h, w]` → `[b, c·k·k, oh·ow]` patch matrix with zero padding.
    pub fn im2col<T: Scalar>(x: &Tensor<T>, g: &ConvGeometry) -> Result<Tensor<T>> {
        if x.rank() != 4 || x.shape[1..] != [g.channels, g.height, g.width] {
            return Err(dim_err("im2col", &x.shape, &[g.channels, g.height, g.width]));
        }
        let batch = x.shape[0];
        let (pl, ol) = (g.patch_len(), g.out_len());
        let plane = g.height * g.width;
        let mut out = vec![T::zero(); batch * pl * ol];
        for b in 0..batch {
            let src = &x.data[b * g.channels * plane..(b + 1) * g.channels * plane];
            let dst = &mut out[b * pl * ol..(b + 1) * pl * ol];
            for c in 0..g.channels {
                for ki in 0..g.kernel {
                    for kj in 0..g.kernel {
                        let row = (c * g.kernel + ki) * g.kernel + kj;
                        let drow = &mut dst[row * ol..(row + 1) * ol];
                        for oy in 0..g.out_h {
                            let y = (oy * g.stride + ki) as isize - g.padding as isize;
                            if y < 0 || y >= g.height as isize {
                                continue;
                            }
                            let srow = &src[c * plane + y as usize * g.width..];
                            for ox in 0..g.out_w {
                                let xx = (ox * g.stride + kj) as isize - g.padding as isize;
                                if xx >= 0 && xx < g.width as isize {
                                    drow[oy * g.out_w + ox] = srow[xx as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(Tensor { shape: vec![batch, pl, ol], data: out })
    }

    /// Adjoint of [`im2col`]: scatters-and-adds patches back into images.
    pub fn col2im<T: Scalar>(cols: &Tensor<T>, g: &ConvGeometry) -> Result<Tensor<T>> {
        let (pl, ol) = (g.patch_len(), g.out_len());
        if cols.rank() != 3 || cols.shape[1..] != [pl, ol] {
            return Err(dim_err("col2im", &cols.shape, &[pl, ol]));
        }
        let batch = cols.shape[0];
        let plane = g.height * g.width;
        let mut out = vec![T::zero(); batch * g.channels * plane];
        for b in 0..batch {
            let src = &cols.data[b * pl * ol..(b + 1) * pl * ol];
            let dst = &mut out[b * g.channels * plane..(b + 1) * g.channels * plane];
            for c in 0..g.channels {
                for ki in 0..g.kernel {
                    for kj in 0..g.kernel {
                        let row = (c * g.kernel + ki) * g.kernel + kj;
                        let srow = &src[row * ol..(row + 1) * ol];
                        for oy in 0..g.out_h {
                            let y = (oy * g.stride + ki) as isize - g.padding as isize;
                            if y < 0 || y >= g.height as isize {
                                continue;
                            }
                            let base = c * plane + y as usize * g.width;
                            for ox in 0..g.out_w {
                                let xx = (ox * g.stride + kj) as isize - g.padding as isize;
                                if xx >= 0 && xx < g.width as isize {
                                    let d = &mut dst[base + xx as usize];
                                    *d = *d + srow[oy * g.out_w + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(Tensor { shape: vec![batch, g.channels, g.height, g.width], data: out })
    }

    /// `w[m, k]` applied to every batch slice of `x[b, k, n]` → `[b, m, n]`.
    pub fn bmm_left<T: Scalar>(w: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        if w.rank() != 2 || x.rank() != 3 || w.shape[1] != x.shape[1] {
            return Err(dim_err("bmm_left", &w.shape, &x.shape));
        }
        let (m, k) = (w.shape[0], w.shape[1]);
        let (b, n) = (x.shape[0], x.shape[2]);
        let mut out = vec![T::zero(); b * m * n];
        for i in 0..b {
            T::gemm(
                m,
                k,
                n,
                (&w.data, k as isize, 1),
                (&x.data[i * k * n..(i + 1) * k * n], n as isize, 1),
                (&mut out[i * m * n..(i + 1) * m * n], n as isize, 1),
                false,
            );
        }
        Ok(Tensor { shape: vec![b, m, n], data: out })
    }

    /// `Σ_b a[b] · x[b]ᵀ` for `a[b, m, n]`, `x[b, k, n]` → `[m, k]`.
    pub fn bmm_sum_nt<T: Scalar>(a: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        if a.rank() != 3 || x.rank() != 3 || a.shape[0] != x.shape[0] || a.shape[2] != x.shape[2]
        {
            return Err(dim_err("bmm_sum_nt", &a.shape, &x.shape));
        }
        let (b, m, n) = (a.shape[0], a.shape[1], a.shape[2]);
        let k = x.shape[1];
        let mut out = vec![T::zero(); m * k];
        for i in 0..b {
            T::gemm(
                m,
                n,
                k,
                (&a.data[i * m * n..(i + 1) * m * n], n as isize, 1),
                // x[i]ᵀ: element (p, q) of the n×k view is x[i][q][p]
                (&x.data[i * k * n..(i + 1) * k * n], 1, n as isize),
                (&mut out, k as isize, 1),
                i > 0,
            );
        }
        Ok(Tensor { shape: vec![m, k], data: out })
    }

    pub fn upsample2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.rank() != 4 {
            return Err(dim_err("upsample2x", &x.shape, &[4]));
        }
        let (bc, h, w) = (x.shape[0] * x.shape[1], x.shape[2], x.shape[3]);
        let mut out = vec![T::zero(); bc * 4 * h * w];
        for p in 0..bc {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[(p * 2 * h + y) * 2 * w + xx] = x.data[(p * h + y / 2) * w + xx / 2];
                }
            }
        }
        Ok(Tensor { shape: vec![x.shape[0], x.shape[1], 2 * h, 2 * w], data: out })
    }

    /// Adjoint of [`upsample2x`]: sums each 2×2 block.
    pub fn pool_sum2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.rank() != 4 || x.shape[2] % 2 != 0 || x.shape[3] % 2 != 0 {
            return Err(dim_err("pool_sum2x", &x.shape, &[4]));
        }
        let (bc, h, w) = (x.shape[0] * x.shape[1], x.shape[2] / 2, x.shape[3] / 2);
        let mut out = vec![T::zero(); bc * h * w];
        for p in 0..bc {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    let o = &mut out[(p * h + y / 2) * w + xx / 2];
                    *o = *o + x.data[(p * 2 * h + y) * 2 * w + xx];
                }
            }
        }
        Ok(Tensor { shape: vec![x.shape[0], x.shape[1], h, w], data: out })
    }

    /// Row-wise log-softmax of a `[rows, k]` matrix, max-shifted.
    pub fn log_softmax<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.rank() != 2 || x.shape[1] == 0 {
            return Err(dim_err("log_softmax", &x.shape, &[2]));
        }
        let k = x.shape[1];
        let mut out = x.data.clone();
        for row in out.chunks_mut(k) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            for v in row.iter_mut() {
                *v = *v - lse;
            }
        }
        Ok(Tensor { shape: x.shape.clone(), data: out })
    }
}
