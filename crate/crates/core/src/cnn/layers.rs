//! Layer kernels and their backward passes. Convolutions are 3x3, stride 1,
//! zero padding 1, computed as cross-correlation through im2col and one
//! matrix product per batch.

use super::tensor::{gemm, Tensor};
use super::CnnError;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

fn im2col(x: &Tensor) -> (Vec<f64>, usize) {
    let (n, c, h, w) = x.dims4().expect("4-d input");
    let hw = h * w;
    let cols_n = n * hw;
    let k = c * 9;
    let mut cols = vec![0.0; k * cols_n];
    let xd = x.data();
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * cols_n;
                for s in 0..n {
                    let src = &xd[(s * c + ci) * hw..(s * c + ci + 1) * hw];
                    let dst = &mut cols[row + s * hw..row + (s + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let sy = sy as usize;
                        // Valid x range for this kernel column.
                        let (x0, x1) = match kx {
                            0 => (1, w),
                            1 => (0, w),
                            _ => (0, w.saturating_sub(1)),
                        };
                        for xx in x0..x1 {
                            dst[y * w + xx] = src[sy * w + xx + kx - 1];
                        }
                    }
                }
            }
        }
    }
    (cols, cols_n)
}

fn col2im(cols: &[f64], shape: (usize, usize, usize, usize)) -> Tensor {
    let (n, c, h, w) = shape;
    let hw = h * w;
    let cols_n = n * hw;
    let mut out = Tensor::zeros(&[n, c, h, w]);
    let od = out.data_mut();
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * cols_n;
                for s in 0..n {
                    let src = &cols[row + s * hw..row + (s + 1) * hw];
                    let dst = &mut od[(s * c + ci) * hw..(s * c + ci + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let sy = sy as usize;
                        let (x0, x1) = match kx {
                            0 => (1, w),
                            1 => (0, w),
                            _ => (0, w.saturating_sub(1)),
                        };
                        for xx in x0..x1 {
                            dst[sy * w + xx + kx - 1] += src[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    out
}

fn check_conv(x: &Tensor, weights: &Tensor, bias: &[f64]) -> Result<(usize, usize, usize, usize, usize), CnnError> {
    let (n, c, h, w) = x.dims4()?;
    let (oc, ic, kh, kw) = weights.dims4()?;
    if ic != c || kh != 3 || kw != 3 {
        return Err(CnnError::Shape(format!("weights {:?} do not fit input {:?}", weights.shape(), x.shape())));
    }
    if bias.len() != oc {
        return Err(CnnError::Shape(format!("bias has {} entries for {oc} channels", bias.len())));
    }
    Ok((n, c, h, w, oc))
}

/// 3x3 cross-correlation, stride 1, zero padding 1.
pub fn conv2d(x: &Tensor, weights: &Tensor, bias: &[f64]) -> Result<Tensor, CnnError> {
    let (n, c, h, w, oc) = check_conv(x, weights, bias)?;
    let hw = h * w;
    let (cols, cols_n) = im2col(x);
    let mut prod = vec![0.0; oc * cols_n];
    gemm(oc, c * 9, cols_n, weights.data(), false, &cols, false, &mut prod, false);
    let mut out = Tensor::zeros(&[n, oc, h, w]);
    let od = out.data_mut();
    for o in 0..oc {
        for s in 0..n {
            let src = &prod[o * cols_n + s * hw..o * cols_n + (s + 1) * hw];
            let dst = &mut od[(s * oc + o) * hw..(s * oc + o + 1) * hw];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = v + bias[o];
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, weights and bias.
pub fn conv2d_backward(x: &Tensor, weights: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Vec<f64>), CnnError> {
    let oc = weights.shape()[0];
    let (n, c, h, w, _) = check_conv(x, weights, &vec![0.0; oc])?;
    if grad_out.shape() != [n, oc, h, w] {
        return Err(CnnError::Shape(format!("output gradient {:?} does not match", grad_out.shape())));
    }
    let hw = h * w;
    let cols_n = n * hw;
    // Gather the output gradient as (oc, n*hw).
    let mut g = vec![0.0; oc * cols_n];
    let gd = grad_out.data();
    let mut db = vec![0.0; oc];
    for o in 0..oc {
        for s in 0..n {
            let src = &gd[(s * oc + o) * hw..(s * oc + o + 1) * hw];
            g[o * cols_n + s * hw..o * cols_n + (s + 1) * hw].copy_from_slice(src);
            db[o] += src.iter().sum::<f64>();
        }
    }
    let (cols, _) = im2col(x);
    let k = c * 9;
    let mut dw = vec![0.0; oc * k];
    gemm(oc, cols_n, k, &g, false, &cols, true, &mut dw, false);
    let mut dcols = vec![0.0; k * cols_n];
    gemm(k, oc, cols_n, weights.data(), true, &g, false, &mut dcols, false);
    let dx = col2im(&dcols, (n, c, h, w));
    Ok((dx, Tensor::new(&[oc, c, 3, 3], dw)?, db))
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Passes gradient where the forward input was positive.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
        if xv <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

/// 2x2 max-pool with stride 2. Returns the output and, per output element,
/// the flat input index of its maximum (first in row-major order on ties).
pub fn maxpool2x2(x: &Tensor) -> Result<(Tensor, Vec<usize>), CnnError> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(CnnError::OddDimensions { height: h, width: w });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut arg = vec![0; n * c * oh * ow];
    let xd = x.data();
    let od = out.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * xx + dx;
                    if xd[i] > xd[best] {
                        best = i;
                    }
                }
                let o = plane * oh * ow + y * ow + xx;
                od[o] = xd[best];
                arg[o] = best;
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2x2_backward(grad_out: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&g, &i) in grad_out.data().iter().zip(argmax) {
        d[i] += g;
    }
    dx
}

/// Per-channel running mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalise with batch statistics and update the running statistics.
    Train,
    /// Normalise with the running statistics.
    Inference,
}

/// Saved values for [`batchnorm_backward`].
#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

fn channel_iter(shape: (usize, usize, usize, usize), ch: usize) -> impl Iterator<Item = usize> {
    let (n, c, h, w) = shape;
    let hw = h * w;
    (0..n).flat_map(move |s| ((s * c + ch) * hw)..((s * c + ch + 1) * hw))
}

/// Batch normalisation over `(n, h, w)` per channel. In training mode the
/// running statistics move by momentum 0.1 towards the batch mean and the
/// unbiased batch variance.
pub fn batchnorm(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    stats: &mut RunningStats,
    mode: BnMode,
) -> Result<(Tensor, Option<BnCache>), CnnError> {
    let shape = x.dims4()?;
    let (n, c, h, w) = shape;
    if gamma.len() != c || beta.len() != c || stats.mean.len() != c || stats.var.len() != c {
        return Err(CnnError::Shape(format!("batchnorm parameters do not match {c} channels")));
    }
    let m = (n * h * w) as f64;
    let xd = x.data();
    let mut out = Tensor::zeros(x.shape());
    match mode {
        BnMode::Train => {
            if n < 2 {
                return Err(CnnError::BatchTooSmall(n));
            }
            let mut xhat = Tensor::zeros(x.shape());
            let mut inv_std = vec![0.0; c];
            for ch in 0..c {
                let mean = channel_iter(shape, ch).map(|i| xd[i]).sum::<f64>() / m;
                let var = channel_iter(shape, ch).map(|i| (xd[i] - mean).powi(2)).sum::<f64>() / m;
                let is = 1.0 / (var + BN_EPS).sqrt();
                inv_std[ch] = is;
                for i in channel_iter(shape, ch) {
                    let xh = (xd[i] - mean) * is;
                    xhat.data_mut()[i] = xh;
                    out.data_mut()[i] = gamma[ch] * xh + beta[ch];
                }
                stats.mean[ch] = (1.0 - BN_MOMENTUM) * stats.mean[ch] + BN_MOMENTUM * mean;
                stats.var[ch] = (1.0 - BN_MOMENTUM) * stats.var[ch] + BN_MOMENTUM * var * m / (m - 1.0);
            }
            Ok((out, Some(BnCache { xhat, inv_std })))
        }
        BnMode::Inference => {
            for ch in 0..c {
                let is = 1.0 / (stats.var[ch] + BN_EPS).sqrt();
                for i in channel_iter(shape, ch) {
                    out.data_mut()[i] = gamma[ch] * (xd[i] - stats.mean[ch]) * is + beta[ch];
                }
            }
            Ok((out, None))
        }
    }
}

/// Gradients of training-mode [`batchnorm`] for input, gamma and beta.
pub fn batchnorm_backward(grad_out: &Tensor, cache: &BnCache, gamma: &[f64]) -> (Tensor, Vec<f64>, Vec<f64>) {
    let shape = grad_out.dims4().expect("4-d gradient");
    let (n, c, h, w) = shape;
    let m = (n * h * w) as f64;
    let g = grad_out.data();
    let xh = cache.xhat.data();
    let mut dx = Tensor::zeros(grad_out.shape());
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ch in 0..c {
        let (mut sg, mut sgx) = (0.0, 0.0);
        for i in channel_iter(shape, ch) {
            sg += g[i];
            sgx += g[i] * xh[i];
        }
        dbeta[ch] = sg;
        dgamma[ch] = sgx;
        let k = gamma[ch] * cache.inv_std[ch] / m;
        for i in channel_iter(shape, ch) {
            dx.data_mut()[i] = k * (m * g[i] - sg - xh[i] * sgx);
        }
    }
    (dx, dgamma, dbeta)
}

/// `x W^T + b` for `x: (n, d)`, `W: (o, d)`.
pub fn dense(x: &Tensor, weights: &Tensor, bias: &[f64]) -> Result<Tensor, CnnError> {
    let (n, d) = x.dims2()?;
    let (o, wd) = weights.dims2()?;
    if wd != d || bias.len() != o {
        return Err(CnnError::Shape(format!("dense weights {:?} do not fit input {:?}", weights.shape(), x.shape())));
    }
    let mut out = vec![0.0; n * o];
    for row in out.chunks_mut(o) {
        row.copy_from_slice(bias);
    }
    gemm(n, d, o, x.data(), false, weights.data(), true, &mut out, true);
    Tensor::new(&[n, o], out)
}

pub fn dense_backward(x: &Tensor, weights: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Vec<f64>), CnnError> {
    let (n, d) = x.dims2()?;
    let (o, _) = weights.dims2()?;
    if grad_out.shape() != [n, o] {
        return Err(CnnError::Shape(format!("output gradient {:?} does not match", grad_out.shape())));
    }
    let mut dx = vec![0.0; n * d];
    gemm(n, o, d, grad_out.data(), false, weights.data(), false, &mut dx, false);
    let mut dw = vec![0.0; o * d];
    gemm(o, n, d, grad_out.data(), true, x.data(), false, &mut dw, false);
    let mut db = vec![0.0; o];
    for row in grad_out.data().chunks(o) {
        for (b, g) in db.iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok((Tensor::new(&[n, d], dx)?, Tensor::new(&[o, d], dw)?, db))
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor, CnnError> {
    let (_, k) = logits.dims2()?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(out)
}

/// Mean cross-entropy of `labels` under `softmax(logits)`, evaluated with
/// log-sum-exp, and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor), CnnError> {
    let (n, k) = logits.dims2()?;
    if labels.len() != n {
        return Err(CnnError::Shape(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(CnnError::LabelOutOfRange { label: bad, classes: k });
    }
    let mut grad = softmax(logits)?;
    let mut loss = 0.0;
    for (i, row) in logits.data().chunks(k).enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[labels[i]];
        grad.data_mut()[i * k + labels[i]] -= 1.0;
    }
    grad.data_mut().iter_mut().for_each(|g| *g /= n as f64);
    Ok((loss / n as f64, grad))
}
